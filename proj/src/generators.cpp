#include "cb/generators.hpp"

#include <algorithm>
#include <cmath>

#include "cb/checkpoint.hpp"
#include "cb/ops.hpp"

namespace cb {

const char* generator_kind_name(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::residual: return "residual";
        case GeneratorKind::residual_attention: return "residual_attention";
        case GeneratorKind::pyramid_transformer: return "pyramid_transformer";
        case GeneratorKind::conv_autoencoder: return "conv_autoencoder";
    }
    return "?";
}

GeneratorKind generator_kind_from_name(const std::string& name) {
    if (name == "residual") return GeneratorKind::residual;
    if (name == "residual_attention") return GeneratorKind::residual_attention;
    if (name == "pyramid_transformer") return GeneratorKind::pyramid_transformer;
    if (name == "conv_autoencoder") return GeneratorKind::conv_autoencoder;
    throw ConfigError("unknown generator kind: " + name);
}

void GeneratorConfig::validate() const {
    for (int d : depth_per_stage)
        if (d < 1) throw ConfigError("generator depth_per_stage entries must be >= 1");
    for (int c : channels_per_stage)
        if (c < 1) throw ConfigError("generator channels_per_stage entries must be >= 1");
    for (int i = 1; i < 4; ++i)
        if (channels_per_stage[static_cast<size_t>(i)] < channels_per_stage[static_cast<size_t>(i - 1)])
            throw ConfigError("generator channels must be non-decreasing across stages");
    if (attention_reduction_ratio < 1)
        throw ConfigError("attention_reduction_ratio must be >= 1");
}

void GateStats::record_gate(const Tensor& gate) {
    for (double v : gate.values()) {
        gate_min = std::min(gate_min, v);
        gate_max = std::max(gate_max, v);
    }
    any_gate = true;
}

void GateStats::merge(const GateStats& other) {
    gate_min = std::min(gate_min, other.gate_min);
    gate_max = std::max(gate_max, other.gate_max);
    max_rowsum_err = std::max(max_rowsum_err, other.max_rowsum_err);
    any_gate = any_gate || other.any_gate;
}

// ---- channel + spatial attention ----

ChannelSpatialAttention::ChannelSpatialAttention(ParamStore& ps, const std::string& name,
                                                 int channels, int reduction) {
    if (reduction > channels)
        throw ConfigError("attention reduction ratio " + std::to_string(reduction) +
                          " exceeds channel count " + std::to_string(channels));
    int hidden = std::max(1, channels / reduction);
    mlp_reduce = Linear(ps, name + ".mlp_reduce", channels, hidden);
    mlp_expand = Linear(ps, name + ".mlp_expand", hidden, channels);
    spatial_conv = Conv2d(ps, name + ".spatial", 2, 1, 7, 1, 3);
}

Tensor ChannelSpatialAttention::forward(const Tensor& f) const {
    if (f.ndim() != 3) throw ShapeError("attention expects (C,H,W)");
    int c = f.dim(0);
    auto shared_mlp = [&](const Tensor& pooled) {
        Tensor t = reshape(pooled, {1, c});
        return mlp_expand.forward(relu(mlp_reduce.forward(t)));
    };
    Tensor mc_logits = add(shared_mlp(global_avg_pool(f)), shared_mlp(global_max_pool(f)));
    Tensor mc = sigmoid(mc_logits);  // (1,C)
    Tensor f1 = broadcast_mul(f, reshape(mc, {c, 1, 1}));

    Tensor desc = concat({mean_over_channels(f1), max_over_channels(f1)}, 0);  // (2,H,W)
    Tensor ms = sigmoid(spatial_conv.forward(desc));                           // (1,H,W)
    Tensor f2 = broadcast_mul(f1, ms);

    stats.record_gate(mc);
    stats.record_gate(ms);
    return f2;
}

// ---- residual block ----

ResidualBlock::ResidualBlock(ParamStore& ps, const std::string& name, int in_c, int out_c,
                             int stride, bool use_bn_)
    : use_bn(use_bn_) {
    conv1 = Conv2d(ps, name + ".conv1", in_c, out_c, 3, stride, 1);
    conv2 = Conv2d(ps, name + ".conv2", out_c, out_c, 3, 1, 1);
    if (use_bn) {
        bn1 = BatchNorm2d(ps, name + ".bn1", out_c);
        bn2 = BatchNorm2d(ps, name + ".bn2", out_c);
        // zero-init the closing gamma: blocks start as identities, which keeps
        // early gradients small under clipping and shortens warm-up
        std::fill(bn2.gamma.values().begin(), bn2.gamma.values().end(), 0.0);
    }
    has_proj = in_c != out_c || stride != 1;
    if (has_proj) {
        proj = Conv2d(ps, name + ".proj", in_c, out_c, 1, stride, 0);
        if (use_bn) proj_bn = BatchNorm2d(ps, name + ".proj_bn", out_c);
    }
}

Tensor ResidualBlock::forward(const Tensor& x) const {
    Tensor t = conv1.forward(x);
    if (use_bn) t = bn1.forward(t);
    t = relu(t);
    t = conv2.forward(t);
    if (use_bn) t = bn2.forward(t);
    Tensor shortcut = x;
    if (has_proj) {
        shortcut = proj.forward(x);
        if (use_bn) shortcut = proj_bn.forward(shortcut);
    }
    return relu(add(shortcut, t));
}

// ---- spatial-reduction attention block ----

SraBlock::SraBlock(ParamStore& ps, const std::string& name, int dim_, int heads_, int reduction_,
                   int mlp_ratio)
    : dim(dim_), heads(heads_), reduction(reduction_) {
    if (dim % heads != 0) throw ConfigError("attention dim must be divisible by head count");
    if (reduction < 1) throw ConfigError("spatial reduction must be >= 1");
    double proj_std = std::sqrt(1.0 / dim);
    ln1 = LayerNormLayer(ps, name + ".ln1", dim);
    ln2 = LayerNormLayer(ps, name + ".ln2", dim);
    wq = Linear(ps, name + ".wq", dim, dim, true, proj_std);
    wk = Linear(ps, name + ".wk", dim, dim, true, proj_std);
    wv = Linear(ps, name + ".wv", dim, dim, true, proj_std);
    wo = Linear(ps, name + ".wo", dim, dim, true, proj_std);
    if (reduction > 1) {
        sr = Conv2d(ps, name + ".sr", dim, dim, reduction, reduction, 0);
        sr_ln = LayerNormLayer(ps, name + ".sr_ln", dim);
    }
    mlp1 = Linear(ps, name + ".mlp1", dim, dim * mlp_ratio);
    mlp2 = Linear(ps, name + ".mlp2", dim * mlp_ratio, dim);
}

Tensor SraBlock::attention(const Tensor& tokens, int h, int w) const {
    if (tokens.ndim() != 2 || tokens.dim(1) != dim) throw ShapeError("attention expects (N,dim) tokens");
    if (tokens.dim(0) != h * w) throw ShapeError("token count does not match the grid");
    Tensor q = wq.forward(tokens);
    Tensor kv_src = tokens;
    if (reduction > 1) {
        if (h % reduction != 0 || w % reduction != 0)
            throw ConfigError("spatial reduction " + std::to_string(reduction) +
                              " does not divide the token grid " + std::to_string(h) + "x" +
                              std::to_string(w));
        Tensor grid = tokens_to_chw(tokens, h, w);
        Tensor red = sr.forward(grid);
        kv_src = sr_ln.forward(chw_to_tokens(red));
    }
    Tensor k = wk.forward(kv_src);
    Tensor v = wv.forward(kv_src);

    int dh = dim / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> head_outputs;
    double worst = stats.max_rowsum_err;
    for (int head = 0; head < heads; ++head) {
        Tensor qh = heads == 1 ? q : slice(q, 1, head * dh, dh);
        Tensor kh = heads == 1 ? k : slice(k, 1, head * dh, dh);
        Tensor vh = heads == 1 ? v : slice(v, 1, head * dh, dh);
        Tensor attn = softmax(scale(matmul(qh, kh, false, true), inv_sqrt), 1);
        for (int row = 0; row < attn.dim(0); ++row) {
            double s = 0;
            for (int col = 0; col < attn.dim(1); ++col) s += attn.at({row, col});
            worst = std::max(worst, std::abs(s - 1.0));
        }
        head_outputs.push_back(matmul(attn, vh));
    }
    stats.max_rowsum_err = worst;
    Tensor mixed = heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
    return wo.forward(mixed);
}

Tensor SraBlock::forward(const Tensor& tokens, int h, int w) const {
    Tensor x = add(tokens, attention(ln1.forward(tokens), h, w));
    Tensor m = mlp2.forward(relu(mlp1.forward(ln2.forward(x))));
    return add(x, m);
}

// ---- generators ----

namespace {

class ResidualGenerator : public Generator {
public:
    ResidualGenerator(const GeneratorConfig& cfg, ParamStore& ps, const std::string& prefix,
                      bool with_attention)
        : with_attention_(with_attention) {
        const auto& ch = cfg.channels_per_stage;
        stem_conv_ = Conv2d(ps, prefix + ".stem", 3, ch[0], 7, 2, 3);
        stem_bn_ = BatchNorm2d(ps, prefix + ".stem_bn", ch[0]);
        for (int s = 0; s < 4; ++s) {
            std::vector<ResidualBlock> blocks;
            int in_c = s == 0 ? ch[0] : ch[static_cast<size_t>(s - 1)];
            int stride = s == 0 ? 1 : 2;
            for (int d = 0; d < cfg.depth_per_stage[static_cast<size_t>(s)]; ++d) {
                std::string name = prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(d);
                blocks.emplace_back(ps, name, d == 0 ? in_c : ch[static_cast<size_t>(s)],
                                    ch[static_cast<size_t>(s)], d == 0 ? stride : 1);
            }
            stages_.push_back(std::move(blocks));
            if (with_attention_)
                attention_.emplace_back(ps, prefix + ".stage" + std::to_string(s) + ".attn",
                                        ch[static_cast<size_t>(s)], cfg.attention_reduction_ratio);
        }
    }

    FeaturePyramid forward(const Tensor& image) const override {
        Tensor x = max_pool2d(relu(stem_bn_.forward(stem_conv_.forward(image))), 3, 2, 1);
        FeaturePyramid pyramid;
        int stride = 4;
        for (size_t s = 0; s < stages_.size(); ++s) {
            for (const ResidualBlock& block : stages_[s]) x = block.forward(x);
            if (with_attention_) x = attention_[s].forward(x);
            pyramid.levels.push_back({x, stride});
            stride *= 2;
        }
        return pyramid;
    }

    GeneratorKind kind() const override {
        return with_attention_ ? GeneratorKind::residual_attention : GeneratorKind::residual;
    }

    void collect_gate_stats(GateStats& out) const override {
        for (const auto& a : attention_) out.merge(a.stats);
    }

private:
    Conv2d stem_conv_;
    BatchNorm2d stem_bn_;
    std::vector<std::vector<ResidualBlock>> stages_;
    std::vector<ChannelSpatialAttention> attention_;
    bool with_attention_;
};

class PyramidTransformerGenerator : public Generator {
public:
    PyramidTransformerGenerator(const GeneratorConfig& cfg, ParamStore& ps, const std::string& prefix) {
        const auto& ch = cfg.channels_per_stage;
        static constexpr std::array<int, 4> kReductions{8, 4, 2, 1};
        for (int s = 0; s < 4; ++s) {
            int in_c = s == 0 ? 3 : ch[static_cast<size_t>(s - 1)];
            int patch = s == 0 ? 4 : 2;
            embeds_.push_back(Conv2d(ps, prefix + ".embed" + std::to_string(s), in_c,
                                     ch[static_cast<size_t>(s)], patch, patch, 0));
            embed_norms_.push_back(
                LayerNormLayer(ps, prefix + ".embed_ln" + std::to_string(s), ch[static_cast<size_t>(s)]));
            std::vector<SraBlock> blocks;
            for (int d = 0; d < cfg.depth_per_stage[static_cast<size_t>(s)]; ++d)
                blocks.emplace_back(ps,
                                    prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(d),
                                    ch[static_cast<size_t>(s)], 1, kReductions[static_cast<size_t>(s)]);
            stages_.push_back(std::move(blocks));
        }
    }

    FeaturePyramid forward(const Tensor& image) const override {
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw ConfigError("pyramid transformer input size must be a multiple of 32, got " +
                              std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)));
        FeaturePyramid pyramid;
        Tensor x = image;
        int stride = 4;
        for (size_t s = 0; s < 4; ++s) {
            Tensor grid = embeds_[s].forward(x);
            int h = grid.dim(1), w = grid.dim(2);
            Tensor tokens = embed_norms_[s].forward(chw_to_tokens(grid));
            for (const SraBlock& block : stages_[s]) tokens = block.forward(tokens, h, w);
            x = tokens_to_chw(tokens, h, w);
            pyramid.levels.push_back({x, stride});
            stride *= 2;
        }
        return pyramid;
    }

    GeneratorKind kind() const override { return GeneratorKind::pyramid_transformer; }

    void collect_gate_stats(GateStats& out) const override {
        for (const auto& stage : stages_)
            for (const auto& block : stage) out.merge(block.stats);
    }

private:
    std::vector<Conv2d> embeds_;
    std::vector<LayerNormLayer> embed_norms_;
    std::vector<std::vector<SraBlock>> stages_;
};

class ConvAutoencoderGenerator : public Generator {
public:
    ConvAutoencoderGenerator(const GeneratorConfig& cfg, ParamStore& ps, const std::string& prefix) {
        const auto& ch = cfg.channels_per_stage;
        enc_.push_back(Conv2d(ps, prefix + ".enc0a", 3, ch[0], 3, 2, 1));
        enc_bn_.push_back(BatchNorm2d(ps, prefix + ".enc0a_bn", ch[0]));
        enc_.push_back(Conv2d(ps, prefix + ".enc0b", ch[0], ch[0], 3, 2, 1));
        enc_bn_.push_back(BatchNorm2d(ps, prefix + ".enc0b_bn", ch[0]));
        for (int s = 1; s < 4; ++s) {
            enc_.push_back(Conv2d(ps, prefix + ".enc" + std::to_string(s),
                                  ch[static_cast<size_t>(s - 1)], ch[static_cast<size_t>(s)], 3, 2, 1));
            enc_bn_.push_back(BatchNorm2d(ps, prefix + ".enc" + std::to_string(s) + "_bn",
                                          ch[static_cast<size_t>(s)]));
        }
        // mirrored decoder, used only for reconstruction pretraining
        dec_.push_back(ConvTranspose2d(ps, prefix + ".dec3", ch[3], ch[2], 4, 2, 1));
        dec_.push_back(ConvTranspose2d(ps, prefix + ".dec2", ch[2], ch[1], 4, 2, 1));
        dec_.push_back(ConvTranspose2d(ps, prefix + ".dec1", ch[1], ch[0], 4, 2, 1));
        dec_.push_back(ConvTranspose2d(ps, prefix + ".dec0a", ch[0], ch[0], 4, 2, 1));
        dec_.push_back(ConvTranspose2d(ps, prefix + ".dec0b", ch[0], 3, 4, 2, 1));
    }

    FeaturePyramid forward(const Tensor& image) const override {
        FeaturePyramid pyramid;
        Tensor x = image;
        int stride = 4;
        for (size_t i = 0; i < enc_.size(); ++i) {
            x = relu(enc_bn_[i].forward(enc_[i].forward(x)));
            if (i == 0) continue;  // first stem conv is stride 2 only
            pyramid.levels.push_back({x, stride});
            stride *= 2;
        }
        return pyramid;
    }

    Tensor reconstruct(const Tensor& image) const {
        Tensor x = forward(image).levels.back().tensor;
        for (size_t i = 0; i < dec_.size(); ++i) {
            x = dec_[i].forward(x);
            if (i + 1 < dec_.size()) x = relu(x);
        }
        return x;
    }

    Tensor reconstruction_loss(const Tensor& image) const {
        Tensor rec = reconstruct(image);
        if (rec.shape() != image.shape()) throw ShapeError("reconstruction shape mismatch");
        Tensor diff = sub(rec, image);
        return mean_all(mul(diff, diff));
    }

    GeneratorKind kind() const override { return GeneratorKind::conv_autoencoder; }

private:
    std::vector<Conv2d> enc_;
    std::vector<BatchNorm2d> enc_bn_;
    std::vector<ConvTranspose2d> dec_;
};

}  // namespace

std::unique_ptr<Generator> build_generator(const GeneratorConfig& config, ParamStore& ps,
                                           const std::string& prefix) {
    config.validate();
    std::unique_ptr<Generator> gen;
    switch (config.kind) {
        case GeneratorKind::residual:
            gen = std::make_unique<ResidualGenerator>(config, ps, prefix, false);
            break;
        case GeneratorKind::residual_attention:
            gen = std::make_unique<ResidualGenerator>(config, ps, prefix, true);
            break;
        case GeneratorKind::pyramid_transformer:
            gen = std::make_unique<PyramidTransformerGenerator>(config, ps, prefix);
            break;
        case GeneratorKind::conv_autoencoder:
            gen = std::make_unique<ConvAutoencoderGenerator>(config, ps, prefix);
            break;
        default:
            throw ConfigError("unknown generator kind");
    }
    if (!config.pretrained_weights_path.empty()) {
        CheckpointData ckpt = load_checkpoint(config.pretrained_weights_path);
        int restored = 0;
        for (const auto& item : ckpt.items) {
            std::string name = prefix + "." + item.name;
            Tensor* t = item.is_buffer ? ps.find_buffer(name) : ps.find_param(name);
            if (!t)
                throw DataError("pretrained checkpoint tensor '" + item.name +
                                "' has no match in generator '" + prefix + "'");
            if (t->shape() != item.shape)
                throw DataError("pretrained shape mismatch for '" + item.name + "'");
            std::copy(item.data.begin(), item.data.end(), t->values().begin());
            ++restored;
        }
        if (restored == 0) throw DataError("pretrained checkpoint was empty");
    }
    if (config.resolved_frozen()) ps.set_requires_grad(prefix, false);
    return gen;
}

BuiltGenerator build_generator(const GeneratorConfig& config, std::uint64_t seed) {
    BuiltGenerator out;
    out.store = std::make_unique<ParamStore>(seed);
    out.config = config;
    GeneratorConfig local = config;
    std::string path = local.pretrained_weights_path;
    local.pretrained_weights_path.clear();  // load below against unprefixed names
    out.generator = build_generator(local, *out.store, "g");
    if (!path.empty()) {
        CheckpointData ckpt = load_checkpoint(path);
        for (const auto& item : ckpt.items) {
            std::string name = "g." + item.name;
            Tensor* t = item.is_buffer ? out.store->find_buffer(name) : out.store->find_param(name);
            if (!t) throw DataError("pretrained checkpoint tensor '" + item.name + "' not found");
            if (t->shape() != item.shape) throw DataError("pretrained shape mismatch for '" + item.name + "'");
            std::copy(item.data.begin(), item.data.end(), t->values().begin());
        }
        if (config.resolved_frozen()) out.store->set_requires_grad("g", false);
    }
    return out;
}

void save_generator_checkpoint(const std::string& path, const BuiltGenerator& gen) {
    // strip the internal "g." prefix so checkpoints are structure-relative
    ParamStore flat(0);
    for (const auto& e : gen.store->params())
        flat.params().push_back({e.name.substr(2), e.tensor});
    for (const auto& e : gen.store->buffers())
        flat.buffers().push_back({e.name.substr(2), e.tensor});
    std::string manifest = std::string("{\"kind\":\"") + generator_kind_name(gen.config.kind) +
                           "\",\"format_version\":1}";
    save_checkpoint(path, manifest, flat);
}

std::map<std::string, GeneratorCombo> generator_combos(const GeneratorScale& scale) {
    auto residual = [&](const std::string& label) {
        GeneratorConfig c;
        c.kind = GeneratorKind::residual;
        c.channels_per_stage = scale.channels;
        c.depth_per_stage = scale.depths;
        c.label = label;
        return c;
    };
    auto cbam = [&](const std::string& label) {
        GeneratorConfig c;
        c.kind = GeneratorKind::residual_attention;
        c.channels_per_stage = scale.channels;
        c.depth_per_stage = scale.depths;
        c.attention_reduction_ratio = scale.attention_reduction;
        c.label = label;
        return c;
    };
    auto pvt = [&](const std::string& label) {
        GeneratorConfig c;
        c.kind = GeneratorKind::pyramid_transformer;
        c.channels_per_stage = scale.channels;
        c.depth_per_stage = scale.depths;
        c.label = label;
        return c;
    };
    auto autoenc = [&](const std::string& label) {
        GeneratorConfig c;
        c.kind = GeneratorKind::conv_autoencoder;
        c.channels_per_stage = scale.channels;
        c.depth_per_stage = scale.depths;
        c.label = label;
        return c;
    };
    auto deep_residual = [&](const std::string& label) {
        GeneratorConfig c = residual(label);
        c.depth_per_stage = scale.deep_depths;
        return c;
    };
    auto wide_residual = [&](const std::string& label) {
        GeneratorConfig c = residual(label);
        c.channels_per_stage = scale.wide_channels;
        return c;
    };

    std::map<std::string, GeneratorCombo> combos;
    combos["Channel Generator-1"] = {"Channel Generator-1", {residual("ResNet"), pvt("PVT")}};
    combos["Channel Generator-2"] = {"Channel Generator-2",
                                     {residual("ResNet-50"), cbam("ResNet-CBAM"), pvt("PVT"),
                                      autoenc("Convolutional Autoencoder")}};
    combos["Channel Generator-3"] = {"Channel Generator-3",
                                     {residual("ResNet-50"), cbam("ResNet-CBAM"),
                                      autoenc("ConvAutoencoder")}};
    combos["Channel Generator-4"] = {"Channel Generator-4",
                                     {residual("ResNet-50"), cbam("ResNet-CBAM"), pvt("PVT"),
                                      deep_residual("ResNet-101")}};
    combos["Channel Generator-5"] = {"Channel Generator-5",
                                     {residual("ResNet-50"), cbam("ResNet-CBAM"),
                                      wide_residual("ResNext"), deep_residual("ResNet-101")}};
    combos["Channel Generator-6"] = {"Channel Generator-6",
                                     {cbam("ResNet-CBAM"), wide_residual("ResNext")}};
    return combos;
}

ComboModel::ComboModel(const GeneratorCombo& combo, ParamStore& ps, const std::string& prefix) {
    if (combo.members.size() < 2 || combo.members.size() > 4)
        throw ConfigError("a generator combo needs 2 to 4 members");
    for (size_t i = 0; i < combo.members.size(); ++i) {
        const GeneratorConfig& cfg = combo.members[i];
        std::string label = cfg.label.empty() ? generator_kind_name(cfg.kind) : cfg.label;
        names_.push_back(label);
        members_.push_back(build_generator(cfg, ps, prefix + "." + label));
    }
}

std::vector<FeaturePyramid> ComboModel::forward(const Tensor& image) const {
    std::vector<FeaturePyramid> out;
    out.reserve(members_.size());
    for (size_t i = 0; i < members_.size(); ++i) {
        try {
            out.push_back(members_[i]->forward(image));
        } catch (ConfigError& e) {
            throw ConfigError("generator '" + names_[i] + "': " + e.what());
        } catch (NumericError& e) {
            throw NumericError("generator '" + names_[i] + "': " + e.what());
        } catch (ShapeError& e) {
            throw ShapeError("generator '" + names_[i] + "': " + e.what());
        }
    }
    return out;
}

void ComboModel::collect_gate_stats(GateStats& out) const {
    for (const auto& m : members_) m->collect_gate_stats(out);
}

std::vector<FeaturePyramid> run_combo(const ComboModel& combo, const Tensor& image) {
    return combo.forward(image);
}

}  // namespace cb
