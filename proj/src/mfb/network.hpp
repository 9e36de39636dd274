#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "jet.hpp"
#include "tape.hpp"

namespace mfb {

// Fully-connected architecture: layer_widths includes input and output dims,
// activations has one tag per affine map (applied after it; the final tag is
// normally Identity).
struct MlpSpec {
    std::vector<int> layer_widths;
    std::vector<ad::Fn> activations;

    int input_dim() const { return layer_widths.empty() ? 0 : layer_widths.front(); }
    int output_dim() const { return layer_widths.empty() ? 0 : layer_widths.back(); }
    int n_affine() const { return layer_widths.empty() ? 0 : int(layer_widths.size()) - 1; }
    bool empty() const { return layer_widths.empty(); }

    size_t n_params() const;
    void validate() const;

    /// widths = [in, width x n_hidden, out]; hidden tags from `hidden`,
    /// cycled; Identity output.
    static MlpSpec dense(int in, int n_hidden, int width, int out,
                         std::vector<ad::Fn> hidden);
    /// Near-linear correlator: identity hidden layers with one relu in the middle.
    static MlpSpec dense_linear_relu(int in, int n_hidden, int width, int out);
};

/// Affine normalization of physical inputs onto [-1, 1] per dimension.
struct Normalization {
    std::vector<double> lo, hi;

    double scale(int i) const { return 2.0 / (hi[i] - lo[i]); }
    double shift(int i) const { return -(hi[i] + lo[i]) / (hi[i] - lo[i]); }
    double apply(int i, double x) const { return scale(i) * x + shift(i); }
    void validate(int dim) const;
};

enum class GateMode { Learned, FixedHalf, AlphaOne, AlphaZero };
enum class ModelKind { Full, SingleNet };

struct MfSpecs {
    MlpSpec lf, lin, nl, gate;
};

enum class Preset { Full, Desk, Mini };

/// Architecture set for a problem with `coord_dim` space-time coordinates
/// (the parameter axis is appended internally) and `out_dim` solution
/// components. Preset::Full matches the published configuration.
MfSpecs default_specs(int coord_dim, int out_dim, Preset preset);
MlpSpec single_net_spec(int coord_dim, int out_dim, Preset preset);

template <class T>
struct MfOut {
    std::vector<T> u_mf, u_lf, u_lin, u_nl;
    T alpha{};
};

/// Handles into a taped composite forward pass.
struct MfTaped {
    ad::Range u_mf, u_lf, u_lin, u_nl;
    ad::VarId alpha = -1;
};

// The four-net composite with a flat parameter vector. Block order is
// (lf, lin, nl, gate); per-net spans alias the flat storage, so flat updates
// and per-net reads round-trip exactly. For ModelKind::SingleNet only the lf
// block exists and the model output is the lf output unchanged.
struct MfModel {
    MfSpecs specs;
    Normalization norm;
    std::vector<double> params;
    GateMode gate_mode = GateMode::Learned;
    ModelKind kind = ModelKind::Full;
    uint64_t init_seed = 0;

    size_t n_params() const { return params.size(); }
    int input_dim() const { return specs.lf.input_dim(); }
    int output_dim() const { return specs.lf.output_dim(); }

    /// (offset, length) of each net's block in the flat vector: lf, lin, nl, gate.
    std::array<std::pair<size_t, size_t>, 4> blocks() const;
    std::span<double> lf_params() { return block_span(0); }
    std::span<double> lin_params() { return block_span(1); }
    std::span<double> nl_params() { return block_span(2); }
    std::span<double> gate_params() { return block_span(3); }

    std::span<double> block_span(int i);
    std::span<const double> block_span(int i) const;

    double alpha_of_logit(double logit) const;

    void validate() const;
};

/// Glorot-uniform weights and zero biases, deterministic per seed. The gate's
/// final layer is damped so the initial mixing coefficient stays near 1/2.
MfModel init_params(const MfSpecs& specs, const Normalization& norm, uint64_t seed,
                    GateMode gate_mode = GateMode::Learned,
                    ModelKind kind = ModelKind::Full);

/// Plain MLP forward over doubles or jets; `p` is the net's parameter block.
template <class T>
std::vector<T> mlp_forward(const MlpSpec& spec, std::span<const double> p,
                           std::span<const T> in);

/// Low-fidelity net only, physical inputs [coords..., mu].
std::vector<double> forward_lf(const MfModel& model, std::span<const double> in);

/// Full composite at one physical point.
MfOut<double> forward_mf(const MfModel& model, std::span<const double> in);

/// Composite over jets (inputs carry derivative seeds, already physical;
/// normalization is applied inside).
MfOut<ad::Jet> forward_mf_jet(const MfModel& model, std::span<const ad::Jet> in);

/// Records the composite forward on a tape. `coords` are leaves holding
/// physical inputs (normalization nodes are added here).
MfTaped build_mf_tape(const MfModel& model, ad::Tape& tape, ad::Range coords);

std::string save_checkpoint(const MfModel& model);
MfModel load_checkpoint(const std::string& text);
void write_checkpoint(const MfModel& model, const std::string& path);
MfModel read_checkpoint(const std::string& path);

} // namespace mfb
