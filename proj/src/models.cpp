#include "mfn/models.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "mfn/format.hpp"

namespace mfn {

std::string to_string(Architecture a) {
    switch (a) {
    case Architecture::segnet: return "segnet";
    case Architecture::segnet_ms: return "segnet_ms";
    case Architecture::fusenet_sum: return "fusenet_sum";
    case Architecture::fusenet_virtual: return "fusenet_virtual";
    case Architecture::residual_correction: return "residual_correction";
    }
    return "?";
}

Architecture parse_architecture(const std::string& s) {
    for (Architecture a : {Architecture::segnet, Architecture::segnet_ms, Architecture::fusenet_sum,
                           Architecture::fusenet_virtual, Architecture::residual_correction})
        if (to_string(a) == s) return a;
    throw ConfigError("unknown architecture '" + s + "'");
}

std::string to_string(Modality m) { return m == Modality::optical ? "optical" : "composite"; }

Modality parse_modality(const std::string& s) {
    if (s == "optical") return Modality::optical;
    if (s == "composite") return Modality::composite;
    throw ConfigError("unknown modality '" + s + "'");
}

std::array<int, 5> scaled_widths(double scale) {
    if (!(scale > 0.0)) throw ConfigError("width_scale must be > 0");
    constexpr std::array<int, 5> base = {64, 128, 256, 512, 512};
    std::array<int, 5> out{};
    for (int i = 0; i < 5; ++i) out[i] = std::max(1, static_cast<int>(std::lround(base[i] * scale)));
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

void write_config(std::ostringstream& os, const ModelConfig& cfg, const std::string& prefix) {
    os << prefix << "arch=" << to_string(cfg.arch) << '\n';
    os << prefix << "k=" << cfg.k << '\n';
    os << prefix << "width_scale=" << format_double(cfg.width_scale) << '\n';
    os << prefix << "widths=";
    for (int i = 0; i < 5; ++i) os << (i ? "," : "") << cfg.widths[i];
    os << '\n';
    os << prefix << "block_order=" << to_string(cfg.block_order) << '\n';
    os << prefix << "branches=" << cfg.branches << '\n';
    os << prefix << "modality=" << to_string(cfg.modality) << '\n';
    os << prefix << "channels_per_modality=" << cfg.channels_per_modality << '\n';
    os << prefix << "correction_width=" << cfg.correction_width << '\n';
    os << prefix << "bases=" << cfg.bases.size() << '\n';
    for (std::size_t i = 0; i < cfg.bases.size(); ++i)
        write_config(os, cfg.bases[i], prefix + "base" + std::to_string(i) + ".");
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw CheckpointError("manifest: bad integer for " + key + ": '" + v + "'");
    }
}

ModelConfig read_config(const std::map<std::string, std::string>& kv, const std::string& prefix) {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(prefix + key);
        if (it == kv.end()) throw CheckpointError("manifest: missing key " + prefix + key);
        return it->second;
    };
    ModelConfig cfg;
    try {
        cfg.arch = parse_architecture(get("arch"));
        cfg.block_order = parse_block_order(get("block_order"));
        cfg.modality = parse_modality(get("modality"));
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("manifest: ") + e.what());
    }
    cfg.k = to_int("k", get("k"));
    cfg.width_scale = std::stod(get("width_scale"));
    std::istringstream ws(get("widths"));
    std::string part;
    for (int i = 0; i < 5; ++i) {
        if (!std::getline(ws, part, ',')) throw CheckpointError("manifest: widths needs 5 entries");
        cfg.widths[i] = to_int("widths", part);
    }
    cfg.branches = to_int("branches", get("branches"));
    cfg.channels_per_modality = to_int("channels_per_modality", get("channels_per_modality"));
    cfg.correction_width = to_int("correction_width", get("correction_width"));
    const int nb = to_int("bases", get("bases"));
    for (int i = 0; i < nb; ++i)
        cfg.bases.push_back(read_config(kv, prefix + "base" + std::to_string(i) + "."));
    return cfg;
}

} // namespace

std::string to_manifest(const ModelConfig& cfg) {
    std::ostringstream os;
    write_config(os, cfg, "");
    return os.str();
}

ModelConfig parse_manifest(const std::string& manifest) {
    std::map<std::string, std::string> kv;
    std::istringstream is(manifest);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("manifest: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return read_config(kv, "");
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

void init_units(Sequential& block, std::mt19937_64& rng) {
    for (std::size_t u = 0; u < block.size(); ++u) static_cast<ConvUnit&>(block.at(u)).conv().init_he(rng);
}

void require_divisible(const Tensor4& x, const char* who) {
    if (x.h() % 32 != 0 || x.w() % 32 != 0)
        throw ShapeError(std::string(who) + ": spatial dims must be divisible by 32, got " +
                         x.shape().str());
}

} // namespace

Encoder::Encoder(std::string name, int in_channels, const std::array<int, 5>& widths, BlockOrder order) {
    for (int s = 0; s < 5; ++s) {
        const std::string stage = name + ".s" + std::to_string(s);
        auto block = std::make_unique<Sequential>(stage);
        for (int u = 0; u < kUnits[s]; ++u) {
            const int in = u == 0 ? (s == 0 ? in_channels : widths[s - 1]) : widths[s];
            block->emplace<ConvUnit>(stage + ".u" + std::to_string(u), in, widths[s], order);
        }
        blocks_.push_back(std::move(block));
        pools_.emplace_back(stage + ".pool");
    }
}

Tensor4 Encoder::forward(const Tensor4& x) {
    Tensor4 cur = x;
    for (int s = 0; s < 5; ++s) cur = pools_[s].forward(blocks_[s]->forward(cur));
    return cur;
}

Tensor4 Encoder::backward(const Tensor4& d_bottom) {
    Tensor4 d = d_bottom;
    for (int s = 4; s >= 0; --s) d = blocks_[s]->backward(pools_[s].backward(d));
    return d;
}

std::array<PoolIndices, 5> Encoder::indices() const {
    std::array<PoolIndices, 5> out;
    for (int s = 0; s < 5; ++s) out[s] = pools_[s].indices();
    return out;
}

void Encoder::init(std::mt19937_64& rng) {
    for (auto& b : blocks_) init_units(*b, rng);
}

void Encoder::collect_parameters(std::vector<Parameter*>& out) {
    for (auto& b : blocks_) b->collect_parameters(out);
}

void Encoder::collect_state(std::vector<StateRef>& out) {
    for (auto& b : blocks_) b->collect_state(out);
}

void Encoder::set_training(bool training) {
    for (auto& b : blocks_) b->set_training(training);
}

std::uint64_t Encoder::switch_signature() const {
    std::uint64_t h = 1;
    for (int s = 0; s < 5; ++s) {
        h = hash_combine(h, blocks_[s]->switch_signature());
        h = hash_combine(h, pools_[s].switch_signature());
    }
    return h;
}

// ---------------------------------------------------------------------------
// Decoder

int branch_block(int i) { return 3 - i; }
int branch_factor(int i) { return 2 << i; }

Decoder::Decoder(std::string name, const std::array<int, 5>& widths, int k, BlockOrder order, int branches)
    : classifier_(name + ".classifier", widths[0], k, 3, 1) {
    if (branches < 0 || branches > 3) throw ConfigError("branches must be in [0, 3]");
    if (k < 1 || k > 255) throw ConfigError("k must be in [1, 255]");
    for (int j = 0; j < 5; ++j) {
        const int e = 4 - j;
        const std::string stage = name + ".s" + std::to_string(j);
        auto block = std::make_unique<Sequential>(stage);
        const int units = Encoder::kUnits[e] - (e == 0 ? 1 : 0);
        for (int u = 0; u < units; ++u) {
            const int out = (u == units - 1 && e > 0) ? widths[e - 1] : widths[e];
            block->emplace<ConvUnit>(stage + ".u" + std::to_string(u), widths[e], out, order);
        }
        blocks_.push_back(std::move(block));
        unpools_.emplace_back(stage + ".unpool");
    }
    for (int i = 0; i < branches; ++i) {
        const int j = branch_block(i);
        const int channels = widths[3 - j];
        heads_.emplace_back(name + ".branch_x" + std::to_string(branch_factor(i)), channels, k, 1, 0);
        head_block_.push_back(j);
        upsamplers_.emplace_back(branch_factor(i));
    }
}

DecoderOutput Decoder::forward(const Tensor4& bottom, const std::array<PoolIndices, 5>& indices) {
    DecoderOutput out;
    Tensor4 cur = bottom;
    out.branches.resize(heads_.size());
    for (int j = 0; j < 5; ++j) {
        unpools_[j].set_indices(indices[4 - j]);
        cur = blocks_[j]->forward(unpools_[j].forward(cur));
        for (std::size_t i = 0; i < heads_.size(); ++i)
            if (head_block_[i] == j) out.branches[i] = heads_[i].forward(cur);
    }
    out.head = classifier_.forward(cur);
    out.features = std::move(cur);
    out.scores = out.head;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        out.scores = add(out.scores, upsamplers_[i].forward(out.branches[i]));
        out.factors.push_back(upsamplers_[i].factor());
    }
    return out;
}

Tensor4 Decoder::backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches) {
    if (!d_branches.empty() && d_branches.size() != heads_.size())
        throw ShapeError("decoder: expected " + std::to_string(heads_.size()) + " branch gradients");
    std::vector<Tensor4> d_head(heads_.size());
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        d_head[i] = upsamplers_[i].backward(d_scores);
        if (!d_branches.empty()) axpy(d_head[i], d_branches[i]);
    }
    Tensor4 d = classifier_.backward(d_scores);
    for (int j = 4; j >= 0; --j) {
        for (std::size_t i = 0; i < heads_.size(); ++i)
            if (head_block_[i] == j) axpy(d, heads_[i].backward(d_head[i]));
        d = unpools_[j].backward(blocks_[j]->backward(d));
    }
    return d;
}

void Decoder::init(std::mt19937_64& rng) {
    for (auto& b : blocks_) init_units(*b, rng);
    classifier_.init_he(rng);
    for (auto& h : heads_) h.init_he(rng);
}

void Decoder::collect_parameters(std::vector<Parameter*>& out) {
    for (auto& b : blocks_) b->collect_parameters(out);
    classifier_.collect_parameters(out);
    for (auto& h : heads_) h.collect_parameters(out);
}

void Decoder::collect_state(std::vector<StateRef>& out) {
    for (auto& b : blocks_) b->collect_state(out);
    classifier_.collect_state(out);
    for (auto& h : heads_) h.collect_state(out);
}

void Decoder::set_training(bool training) {
    for (auto& b : blocks_) b->set_training(training);
}

std::uint64_t Decoder::switch_signature() const {
    std::uint64_t h = 2;
    for (const auto& b : blocks_) h = hash_combine(h, b->switch_signature());
    return h;
}

// ---------------------------------------------------------------------------
// SegNet

SegNet::SegNet(const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg), encoder_("encoder", cfg.channels_per_modality, cfg.widths, cfg.block_order),
      decoder_("decoder", cfg.widths, cfg.k, cfg.block_order,
               cfg.arch == Architecture::segnet ? 0 : cfg.branches) {
    if (cfg.arch == Architecture::segnet) cfg_.branches = 0;
    encoder_.init(rng);
    decoder_.init(rng);
}

ModelOutput SegNet::forward(std::span<const Tensor4> inputs) {
    if (inputs.size() != 1) throw ArgumentError("segnet: expected exactly one input");
    const Tensor4& x = inputs[0];
    require_divisible(x, "segnet");
    if (x.c() != cfg_.channels_per_modality)
        throw ShapeError("segnet: expected " + std::to_string(cfg_.channels_per_modality) +
                         " input channels, got " + std::to_string(x.c()));
    const Tensor4 bottom = encoder_.forward(x);
    DecoderOutput d = decoder_.forward(bottom, encoder_.indices());
    features_ = std::move(d.features);
    return ModelOutput{std::move(d.scores), std::move(d.head), std::move(d.branches), std::move(d.factors)};
}

std::vector<Tensor4> SegNet::backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches) {
    std::vector<Tensor4> out;
    out.push_back(encoder_.backward(decoder_.backward(d_scores, d_branches)));
    return out;
}

void SegNet::collect_parameters(std::vector<Parameter*>& out) {
    encoder_.collect_parameters(out);
    decoder_.collect_parameters(out);
}

void SegNet::collect_state(std::vector<StateRef>& out) {
    encoder_.collect_state(out);
    decoder_.collect_state(out);
}

void SegNet::set_training(bool training) {
    encoder_.set_training(training);
    decoder_.set_training(training);
}

std::uint64_t SegNet::switch_signature() const {
    return hash_combine(encoder_.switch_signature(), decoder_.switch_signature());
}

// ---------------------------------------------------------------------------
// FuseNet

FuseNet::FuseNet(const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg), main_("encoder", cfg.channels_per_modality, cfg.widths, cfg.block_order),
      aux_("aux_encoder", cfg.channels_per_modality, cfg.widths, cfg.block_order),
      decoder_("decoder", cfg.widths, cfg.k, cfg.block_order, cfg.branches) {
    if (cfg.arch != Architecture::fusenet_sum && cfg.arch != Architecture::fusenet_virtual)
        throw ConfigError("FuseNet built with architecture " + to_string(cfg.arch));
    main_.init(rng);
    aux_.init(rng);
    if (virtual_mode()) {
        for (int s = 0; s < 5; ++s) {
            const int in = (s == 0 ? 0 : cfg.widths[s - 1]) + 2 * cfg.widths[s];
            auto unit = std::make_unique<ConvUnit>("virtual.s" + std::to_string(s), in, cfg.widths[s],
                                                   cfg.block_order);
            unit->conv().init_he(rng);
            virtual_units_.push_back(std::move(unit));
            virtual_pools_.emplace_back("virtual.s" + std::to_string(s) + ".pool");
        }
    }
    decoder_.init(rng);
}

void FuseNet::zero_virtual_units() {
    for (auto& u : virtual_units_) u->conv().zero_init();
}

ModelOutput FuseNet::forward(std::span<const Tensor4> inputs) {
    if (inputs.size() != 2) throw ArgumentError("fusenet: expected optical and composite inputs");
    const Tensor4& optical = inputs[0];
    const Tensor4& composite = inputs[1];
    if (optical.n() != composite.n() || optical.h() != composite.h() || optical.w() != composite.w())
        throw ShapeError("fusenet: optical " + optical.shape().str() + " vs composite " +
                         composite.shape().str());
    require_divisible(optical, "fusenet");

    Tensor4 m = optical;
    Tensor4 a = composite;
    Tensor4 v;
    for (int s = 0; s < 5; ++s) {
        Tensor4 mb = main_.block(s).forward(m);
        Tensor4 ab = aux_.block(s).forward(a);
        stage_shapes_[s] = mb.shape();
        if (virtual_mode()) {
            const Tensor4 vin = s == 0 ? channel_concat({&mb, &ab}) : channel_concat({&v, &mb, &ab});
            const Tensor4 fused = add(virtual_units_[s]->forward(vin), average(mb, ab));
            v = virtual_pools_[s].forward(fused);
            m = main_.pool(s).forward(mb);
        } else {
            m = main_.pool(s).forward(add(mb, ab));
        }
        a = aux_.pool(s).forward(ab);
        if (aux_index_hook) aux_index_hook(s, aux_.pool(s).mutable_indices());
    }
    DecoderOutput d = decoder_.forward(virtual_mode() ? v : m, main_.indices());
    return ModelOutput{std::move(d.scores), std::move(d.head), std::move(d.branches), std::move(d.factors)};
}

std::vector<Tensor4> FuseNet::backward(const Tensor4& d_scores, std::span<const Tensor4> d_branches) {
    const Tensor4 d_bottom = decoder_.backward(d_scores, d_branches);
    Tensor4 d_m; // gradient w.r.t. the pooled main output of stage s
    Tensor4 d_a;
    Tensor4 d_v;
    if (virtual_mode())
        d_v = d_bottom;
    else
        d_m = d_bottom;

    for (int s = 4; s >= 0; --s) {
        Tensor4 d_mb;
        Tensor4 d_ab;
        if (virtual_mode()) {
            const Tensor4 dv = virtual_pools_[s].backward(d_v);
            const Tensor4 d_vin = virtual_units_[s]->backward(dv);
            const int w = cfg_.widths[s];
            std::vector<Tensor4> parts;
            if (s == 0) {
                const int split[2] = {w, w};
                parts = channel_split(d_vin, split);
                d_mb = std::move(parts[0]);
                d_ab = std::move(parts[1]);
            } else {
                const int split[3] = {cfg_.widths[s - 1], w, w};
                parts = channel_split(d_vin, split);
                d_v = std::move(parts[0]);
                d_mb = std::move(parts[1]);
                d_ab = std::move(parts[2]);
            }
            axpy(d_mb, dv, 0.5f);
            axpy(d_ab, dv, 0.5f);
            if (!d_m.empty()) axpy(d_mb, main_.pool(s).backward(d_m));
        } else {
            d_mb = main_.pool(s).backward(d_m);
            d_ab = d_mb;
        }
        if (!d_a.empty()) axpy(d_ab, aux_.pool(s).backward(d_a));
        d_m = main_.block(s).backward(d_mb);
        d_a = aux_.block(s).backward(d_ab);
    }
    std::vector<Tensor4> out;
    out.push_back(std::move(d_m));
    out.push_back(std::move(d_a));
    return out;
}

void FuseNet::collect_parameters(std::vector<Parameter*>& out) {
    main_.collect_parameters(out);
    aux_.collect_parameters(out);
    for (auto& u : virtual_units_) u->collect_parameters(out);
    decoder_.collect_parameters(out);
}

void FuseNet::collect_state(std::vector<StateRef>& out) {
    main_.collect_state(out);
    aux_.collect_state(out);
    for (auto& u : virtual_units_) u->collect_state(out);
    decoder_.collect_state(out);
}

void FuseNet::set_training(bool training) {
    main_.set_training(training);
    aux_.set_training(training);
    for (auto& u : virtual_units_) u->set_training(training);
    decoder_.set_training(training);
}

std::uint64_t FuseNet::switch_signature() const {
    std::uint64_t h = hash_combine(main_.switch_signature(), aux_.switch_signature());
    for (const auto& u : virtual_units_) h = hash_combine(h, u->switch_signature());
    for (const auto& p : virtual_pools_) h = hash_combine(h, p.switch_signature());
    return hash_combine(h, decoder_.switch_signature());
}

// ---------------------------------------------------------------------------
// Residual correction

ResidualCorrection::ResidualCorrection(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    for (const ModelConfig& b : cfg.bases) {
        if (b.arch != Architecture::segnet && b.arch != Architecture::segnet_ms)
            throw ConfigError("residual correction bases must be SegNet models");
        bases_.push_back(std::make_unique<SegNet>(b, rng));
    }
    build(rng);
}

ResidualCorrection::ResidualCorrection(const ModelConfig& cfg, std::vector<std::unique_ptr<SegNet>> bases,
                                       std::mt19937_64& rng)
    : cfg_(cfg), bases_(std::move(bases)) {
    cfg_.bases.clear();
    for (auto& b : bases_) cfg_.bases.push_back(b->config());
    build(rng);
}

void ResidualCorrection::build(std::mt19937_64& rng) {
    if (bases_.empty()) throw ConfigError("residual correction needs at least one base model");
    int in = 0;
    for (auto& b : bases_) {
        if (b->config().k != cfg_.k) throw ConfigError("residual correction bases disagree on k");
        in += b->config().widths[0];
        b->set_training(false);
    }
    const int width = cfg_.correction_width;
    auto& c1 = correction_.emplace<Conv2D>("correction.conv1", in, width, 3, 1);
    correction_.emplace<ReLU>("correction.relu1");
    auto& c2 = correction_.emplace<Conv2D>("correction.conv2", width, width, 3, 1);
    correction_.emplace<ReLU>("correction.relu2");
    correction_out_ = &correction_.emplace<Conv2D>("correction.conv3", width, cfg_.k, 3, 1);
    c1.init_he(rng);
    c2.init_he(rng);
    correction_out_->zero_init();
}

std::vector<Modality> ResidualCorrection::modalities() const {
    std::vector<Modality> out;
    for (const auto& b : bases_) out.push_back(b->config().modality);
    return out;
}

ModelOutput ResidualCorrection::forward(std::span<const Tensor4> inputs) {
    if (inputs.size() != bases_.size())
        throw ArgumentError("residual correction: expected " + std::to_string(bases_.size()) + " inputs");
    std::vector<Tensor4> features;
    features.reserve(bases_.size());
    for (std::size_t i = 0; i < bases_.size(); ++i) {
        const ModelOutput o = bases_[i]->forward(inputs.subspan(i, 1));
        Tensor4 p = softmax_channels(o.scores);
        if (i == 0) {
            average_ = std::move(p);
        } else {
            if (p.shape() != average_.shape())
                throw ShapeError("residual correction: base outputs disagree: " + p.shape().str() +
                                 " vs " + average_.shape().str());
            axpy(average_, p);
        }
        features.push_back(bases_[i]->features());
    }
    if (bases_.size() > 1) average_ = scale(average_, 1.0f / static_cast<Real>(bases_.size()));
    std::vector<const Tensor4*> ptrs;
    for (const auto& f : features) ptrs.push_back(&f);
    const Tensor4 c = correction_.forward(channel_concat(ptrs));
    ModelOutput out;
    out.scores = add(average_, c);
    out.head = out.scores;
    return out;
}

std::vector<Tensor4> ResidualCorrection::backward(const Tensor4& d_scores, std::span<const Tensor4>) {
    correction_.backward(d_scores);
    return std::vector<Tensor4>(bases_.size());
}

void ResidualCorrection::collect_parameters(std::vector<Parameter*>& out) {
    correction_.collect_parameters(out);
}

void ResidualCorrection::collect_state(std::vector<StateRef>& out) {
    for (auto& b : bases_) b->collect_state(out);
    correction_.collect_state(out);
}

void ResidualCorrection::set_training(bool) {
    for (auto& b : bases_) b->set_training(false);
}

std::uint64_t ResidualCorrection::switch_signature() const {
    std::uint64_t h = 3;
    for (const auto& b : bases_) h = hash_combine(h, b->switch_signature());
    return hash_combine(h, correction_.switch_signature());
}

// ---------------------------------------------------------------------------

std::unique_ptr<SegmentationModel> make_model(const ModelConfig& cfg, std::mt19937_64& rng) {
    switch (cfg.arch) {
    case Architecture::segnet:
    case Architecture::segnet_ms: return std::make_unique<SegNet>(cfg, rng);
    case Architecture::fusenet_sum:
    case Architecture::fusenet_virtual: return std::make_unique<FuseNet>(cfg, rng);
    case Architecture::residual_correction: return std::make_unique<ResidualCorrection>(cfg, rng);
    }
    throw ConfigError("unknown architecture");
}

ModelAsLayer::ModelAsLayer(SegmentationModel& model, std::string name)
    : model_(model), name_(std::move(name)) {
    for (std::size_t i = 0; i < model.modalities().size(); ++i)
        split_.push_back(model.config().arch == Architecture::residual_correction
                             ? model.config().bases.at(i).channels_per_modality
                             : model.config().channels_per_modality);
}

Tensor4 ModelAsLayer::forward(const Tensor4& x) {
    if (split_.size() == 1) {
        const Tensor4* one = &x;
        return model_.forward(std::span<const Tensor4>(one, 1)).scores;
    }
    const std::vector<Tensor4> parts = channel_split(x, split_);
    return model_.forward(parts).scores;
}

Tensor4 ModelAsLayer::backward(const Tensor4& dy) {
    std::vector<Tensor4> grads = model_.backward(dy, {});
    if (grads.size() == 1 && !grads[0].empty()) return std::move(grads[0]);
    std::vector<const Tensor4*> ptrs;
    std::vector<Tensor4> zeros;
    zeros.reserve(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].empty()) {
            zeros.emplace_back(Shape{dy.n(), split_[i], dy.h(), dy.w()});
            ptrs.push_back(&zeros.back());
        } else {
            ptrs.push_back(&grads[i]);
        }
    }
    return channel_concat(ptrs);
}

std::uint64_t state_checksum(std::span<const StateRef> state) {
    std::uint64_t h = 0;
    for (const StateRef& s : state) {
        h = hash_bytes(h, s.name.data(), s.name.size());
        h = hash_bytes(h, &s.shape, sizeof(Shape));
        h = hash_bytes(h, s.data, s.shape.size() * sizeof(Real));
    }
    return h;
}

} // namespace mfn
