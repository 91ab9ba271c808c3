#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cb/layers.hpp"
#include "cb/pyramid.hpp"

namespace cb {

enum class GeneratorKind { residual, residual_attention, pyramid_transformer, conv_autoencoder };

const char* generator_kind_name(GeneratorKind kind);
GeneratorKind generator_kind_from_name(const std::string& name);

struct GeneratorConfig {
    GeneratorKind kind = GeneratorKind::residual;
    std::array<int, 4> depth_per_stage{1, 1, 1, 1};
    std::array<int, 4> channels_per_stage{4, 8, 16, 32};
    std::string pretrained_weights_path;       // empty -> random init
    int attention_reduction_ratio = 4;         // residual_attention only
    std::optional<bool> frozen;                // default: frozen iff pretrained
    std::string label;                         // display name inside a combo

    bool resolved_frozen() const { return frozen.value_or(!pretrained_weights_path.empty()); }
    void validate() const;
};

// Attention gate diagnostics aggregated across a forward pass: sigmoid gate
// range and worst softmax row-sum deviation.
struct GateStats {
    double gate_min = 1.0;
    double gate_max = 0.0;
    double max_rowsum_err = 0.0;
    bool any_gate = false;

    void record_gate(const Tensor& gate);
    void merge(const GateStats& other);
};

// Sequential channel-then-spatial attention: F' = Mc(F) (x) F, F'' = Ms(F') (x) F'.
// Mc = sigmoid(MLP(avgpool F) + MLP(maxpool F)) with a shared reduction-r MLP;
// Ms = sigmoid(conv7x7(concat(channel-mean F', channel-max F'))).
struct ChannelSpatialAttention {
    Linear mlp_reduce, mlp_expand;
    Conv2d spatial_conv;
    mutable GateStats stats;

    ChannelSpatialAttention() = default;
    ChannelSpatialAttention(ParamStore& ps, const std::string& name, int channels, int reduction);
    Tensor forward(const Tensor& f) const;
};

// Residual unit: out = ReLU(x + F(x)), F = conv-BN-ReLU-conv-BN. A 1x1
// projection (+BN) is applied on the shortcut iff channels or stride change.
struct ResidualBlock {
    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;
    Conv2d proj;
    BatchNorm2d proj_bn;
    bool has_proj = false;
    bool use_bn = true;

    ResidualBlock() = default;
    ResidualBlock(ParamStore& ps, const std::string& name, int in_c, int out_c, int stride,
                  bool use_bn = true);
    Tensor forward(const Tensor& x) const;
};

// One pre-norm transformer unit with spatially reduced keys/values:
// x += attention(LN(x)); x += MLP(LN(x)). With reduction 1 the attention core
// is exactly dense multi-head attention.
struct SraBlock {
    LayerNormLayer ln1, ln2, sr_ln;
    Linear wq, wk, wv, wo, mlp1, mlp2;
    Conv2d sr;
    int dim = 0, heads = 1, reduction = 1;
    mutable GateStats stats;

    SraBlock() = default;
    SraBlock(ParamStore& ps, const std::string& name, int dim, int heads, int reduction,
             int mlp_ratio = 2);
    // Attention core on already-normalized tokens (n,d) laid out on an h x w grid.
    Tensor attention(const Tensor& tokens, int h, int w) const;
    Tensor forward(const Tensor& tokens, int h, int w) const;
};

class Generator {
public:
    virtual ~Generator() = default;
    virtual FeaturePyramid forward(const Tensor& image) const = 0;
    virtual GeneratorKind kind() const = 0;
    virtual void collect_gate_stats(GateStats&) const {}
};

// Builds one generator whose parameters live under `prefix` in `ps`; loads
// pretrained weights when the config names a checkpoint and freezes the
// member per config.resolved_frozen().
std::unique_ptr<Generator> build_generator(const GeneratorConfig& config, ParamStore& ps,
                                           const std::string& prefix);

// Standalone build with its own parameter store.
struct BuiltGenerator {
    std::unique_ptr<ParamStore> store;
    std::unique_ptr<Generator> generator;
    GeneratorConfig config;
};
BuiltGenerator build_generator(const GeneratorConfig& config, std::uint64_t seed);

// Saves a standalone generator checkpoint loadable via pretrained_weights_path.
void save_generator_checkpoint(const std::string& path, const BuiltGenerator& gen);

struct GeneratorCombo {
    std::string name;
    std::vector<GeneratorConfig> members;  // length 2..4
};

// Channel widths/depths used when instantiating named combo members.
struct GeneratorScale {
    std::array<int, 4> channels{4, 8, 16, 32};
    std::array<int, 4> depths{1, 1, 1, 1};
    std::array<int, 4> deep_depths{2, 2, 2, 2};        // the deeper residual variant
    std::array<int, 4> wide_channels{6, 12, 24, 48};   // the wider residual variant
    int attention_reduction = 4;
};

// The six named generator combinations, keyed "Channel Generator-1".."-6".
std::map<std::string, GeneratorCombo> generator_combos(const GeneratorScale& scale = {});

// All members built against one store; forward failures carry the member name.
class ComboModel {
public:
    ComboModel(const GeneratorCombo& combo, ParamStore& ps, const std::string& prefix);

    std::vector<FeaturePyramid> forward(const Tensor& image) const;
    const std::vector<std::string>& member_names() const { return names_; }
    const std::vector<std::unique_ptr<Generator>>& members() const { return members_; }
    void collect_gate_stats(GateStats& out) const;

private:
    std::vector<std::unique_ptr<Generator>> members_;
    std::vector<std::string> names_;
};

std::vector<FeaturePyramid> run_combo(const ComboModel& combo, const Tensor& image);

}  // namespace cb
