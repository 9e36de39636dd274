#include "network.hpp"

#include <cmath>

#include "errors.hpp"
#include "io.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace mfb {

using ad::Fn;
using ad::Jet;
using nlohmann::json;

namespace {

struct Slot {
    size_t w, b;
    int n_in, n_out;
};

std::vector<Slot> layer_slots(const MlpSpec& s, size_t base) {
    std::vector<Slot> slots;
    size_t off = base;
    for (int l = 0; l < s.n_affine(); ++l) {
        const int ni = s.layer_widths[l];
        const int no = s.layer_widths[l + 1];
        slots.push_back({off, off + size_t(ni) * no, ni, no});
        off += size_t(ni) * no + no;
    }
    return slots;
}

const char* fn_name(Fn f) {
    switch (f) {
        case Fn::Identity: return "identity";
        case Fn::Tanh: return "tanh";
        case Fn::Relu: return "relu";
        case Fn::Sin: return "sin";
        case Fn::Cos: return "cos";
        case Fn::Sigmoid: return "sigmoid";
        case Fn::Exp: return "exp";
        case Fn::Log: return "log";
        case Fn::Sqrt: return "sqrt";
        case Fn::Inv: return "inv";
        case Fn::Sqr: return "sqr";
    }
    throw ContractError("fn_name: unknown tag");
}

Fn fn_from_name(const std::string& s) {
    static const std::pair<const char*, Fn> table[] = {
        {"identity", Fn::Identity}, {"tanh", Fn::Tanh},   {"relu", Fn::Relu},
        {"sin", Fn::Sin},           {"cos", Fn::Cos},     {"sigmoid", Fn::Sigmoid},
        {"exp", Fn::Exp},           {"log", Fn::Log},     {"sqrt", Fn::Sqrt},
        {"inv", Fn::Inv},           {"sqr", Fn::Sqr},
    };
    for (auto& [name, fn] : table)
        if (s == name) return fn;
    throw ConfigError("unknown activation tag: " + s);
}

} // namespace

size_t MlpSpec::n_params() const {
    size_t n = 0;
    for (int l = 0; l + 1 < int(layer_widths.size()); ++l)
        n += size_t(layer_widths[l]) * layer_widths[l + 1] + layer_widths[l + 1];
    return n;
}

void MlpSpec::validate() const {
    if (layer_widths.empty()) {
        if (!activations.empty()) throw ContractError("MlpSpec: empty widths but activations set");
        return;
    }
    if (layer_widths.size() < 2) throw ContractError("MlpSpec: need at least input and output widths");
    for (int w : layer_widths)
        if (w <= 0) throw ContractError("MlpSpec: layer widths must be positive");
    if (int(activations.size()) != n_affine())
        throw ContractError("MlpSpec: one activation tag per affine layer required");
}

MlpSpec MlpSpec::dense(int in, int n_hidden, int width, int out, std::vector<Fn> hidden) {
    if (n_hidden <= 0 || hidden.empty()) throw ContractError("MlpSpec::dense: bad hidden config");
    MlpSpec s;
    s.layer_widths.push_back(in);
    for (int i = 0; i < n_hidden; ++i) s.layer_widths.push_back(width);
    s.layer_widths.push_back(out);
    for (int i = 0; i < n_hidden; ++i) s.activations.push_back(hidden[i % hidden.size()]);
    s.activations.push_back(Fn::Identity);
    s.validate();
    return s;
}

MlpSpec MlpSpec::dense_linear_relu(int in, int n_hidden, int width, int out) {
    MlpSpec s = dense(in, n_hidden, width, out, {Fn::Identity});
    s.activations[n_hidden / 2] = Fn::Relu;
    return s;
}

void Normalization::validate(int dim) const {
    if (int(lo.size()) != dim || int(hi.size()) != dim)
        throw ContractError("Normalization: bounds size mismatch");
    for (int i = 0; i < dim; ++i)
        if (!(hi[i] > lo[i])) throw ContractError("Normalization: need hi > lo per dimension");
}

MfSpecs default_specs(int coord_dim, int out_dim, Preset preset) {
    const int in = coord_dim + 1;       // coords plus the PDE parameter
    const int fin = in + out_dim;       // feature vector adds the LF output
    MfSpecs s;
    switch (preset) {
        case Preset::Full:
            s.lf = MlpSpec::dense(in, 7, 64, out_dim, {Fn::Tanh});
            s.lin = MlpSpec::dense_linear_relu(fin, 5, 32, out_dim);
            s.nl = MlpSpec::dense(fin, 6, 48, out_dim, {Fn::Sin, Fn::Tanh});
            s.gate = MlpSpec::dense(fin, 4, 16, 1, {Fn::Sigmoid});
            break;
        case Preset::Desk:
            s.lf = MlpSpec::dense(in, 4, 32, out_dim, {Fn::Tanh});
            s.lin = MlpSpec::dense_linear_relu(fin, 3, 16, out_dim);
            s.nl = MlpSpec::dense(fin, 4, 24, out_dim, {Fn::Sin, Fn::Tanh});
            s.gate = MlpSpec::dense(fin, 3, 8, 1, {Fn::Sigmoid});
            break;
        case Preset::Mini:
            s.lf = MlpSpec::dense(in, 3, 16, out_dim, {Fn::Tanh});
            s.lin = MlpSpec::dense_linear_relu(fin, 2, 12, out_dim);
            s.nl = MlpSpec::dense(fin, 3, 16, out_dim, {Fn::Sin, Fn::Tanh});
            s.gate = MlpSpec::dense(fin, 2, 6, 1, {Fn::Sigmoid});
            break;
    }
    return s;
}

MlpSpec single_net_spec(int coord_dim, int out_dim, Preset preset) {
    const int in = coord_dim + 1;
    switch (preset) {
        case Preset::Full: return MlpSpec::dense(in, 7, 64, out_dim, {Fn::Tanh});
        case Preset::Desk: return MlpSpec::dense(in, 4, 32, out_dim, {Fn::Tanh});
        case Preset::Mini: return MlpSpec::dense(in, 3, 16, out_dim, {Fn::Tanh});
    }
    throw ContractError("single_net_spec: unknown preset");
}

std::array<std::pair<size_t, size_t>, 4> MfModel::blocks() const {
    const size_t n_lf = specs.lf.n_params();
    const size_t n_lin = specs.lin.n_params();
    const size_t n_nl = specs.nl.n_params();
    const size_t n_gate = specs.gate.n_params();
    return {{{0, n_lf},
             {n_lf, n_lin},
             {n_lf + n_lin, n_nl},
             {n_lf + n_lin + n_nl, n_gate}}};
}

std::span<double> MfModel::block_span(int i) {
    auto [off, len] = blocks()[i];
    return {params.data() + off, len};
}

std::span<const double> MfModel::block_span(int i) const {
    auto [off, len] = blocks()[i];
    return {params.data() + off, len};
}

double MfModel::alpha_of_logit(double logit) const {
    switch (gate_mode) {
        case GateMode::Learned: return ad::sigmoid_value(logit);
        case GateMode::FixedHalf: return 0.5;
        case GateMode::AlphaOne: return 1.0;
        case GateMode::AlphaZero: return 0.0;
    }
    throw ContractError("alpha_of_logit: unknown gate mode");
}

void MfModel::validate() const {
    specs.lf.validate();
    norm.validate(specs.lf.input_dim());
    if (kind == ModelKind::SingleNet) {
        if (!specs.lin.empty() || !specs.nl.empty() || !specs.gate.empty())
            throw ContractError("MfModel: single-net model must have empty correlator specs");
    } else {
        specs.lin.validate();
        specs.nl.validate();
        specs.gate.validate();
        const int fin = specs.lf.input_dim() + specs.lf.output_dim();
        if (specs.lin.input_dim() != fin || specs.nl.input_dim() != fin ||
            specs.gate.input_dim() != fin)
            throw ContractError("MfModel: correlator input dim must match feature vector");
        if (specs.lin.output_dim() != specs.lf.output_dim() ||
            specs.nl.output_dim() != specs.lf.output_dim() || specs.gate.output_dim() != 1)
            throw ContractError("MfModel: correlator output dims inconsistent");
    }
    const size_t total =
        specs.lf.n_params() + specs.lin.n_params() + specs.nl.n_params() + specs.gate.n_params();
    if (params.size() != total) throw ContractError("MfModel: flat parameter size mismatch");
}

MfModel init_params(const MfSpecs& specs, const Normalization& norm, uint64_t seed,
                    GateMode gate_mode, ModelKind kind) {
    MfModel m;
    m.specs = specs;
    m.norm = norm;
    m.gate_mode = gate_mode;
    m.kind = kind;
    m.init_seed = seed;
    m.params.assign(specs.lf.n_params() + specs.lin.n_params() + specs.nl.n_params() +
                        specs.gate.n_params(),
                    0.0);

    const MlpSpec* nets[4] = {&specs.lf, &specs.lin, &specs.nl, &specs.gate};
    for (int b = 0; b < 4; ++b) {
        if (nets[b]->empty()) continue;
        Rng rng(seed, uint64_t(b));
        auto slots = layer_slots(*nets[b], m.blocks()[b].first);
        for (const auto& s : slots) {
            const double limit = std::sqrt(6.0 / (s.n_in + s.n_out));
            for (size_t i = 0; i < size_t(s.n_in) * s.n_out; ++i)
                m.params[s.w + i] = rng.uniform(-limit, limit);
            // biases stay zero
        }
        if (b == 3) {
            // Damp the gate's output layer so initial logits sit near zero and
            // the mixing coefficient starts close to 1/2.
            const auto& last = slots.back();
            for (size_t i = 0; i < size_t(last.n_in) * last.n_out; ++i)
                m.params[last.w + i] *= 0.1;
        }
    }
    m.validate();
    return m;
}

namespace {

template <class T>
T tconst(double v, int k);
template <>
double tconst<double>(double v, int) {
    return v;
}
template <>
Jet tconst<Jet>(double v, int k) {
    return Jet::constant(v, k);
}

template <class T>
int dirs_of(const T&) {
    return 0;
}
template <>
int dirs_of<Jet>(const Jet& j) {
    return j.k;
}

} // namespace

template <class T>
std::vector<T> mlp_forward(const MlpSpec& spec, std::span<const double> p, std::span<const T> in) {
    if (int(in.size()) != spec.input_dim()) throw ContractError("mlp_forward: input dim mismatch");
    if (p.size() != spec.n_params()) throw ContractError("mlp_forward: parameter block mismatch");
    const int k = in.empty() ? 0 : dirs_of(in[0]);
    std::vector<T> cur(in.begin(), in.end()), next;
    auto slots = layer_slots(spec, 0);
    for (int l = 0; l < spec.n_affine(); ++l) {
        const auto& s = slots[l];
        next.clear();
        next.reserve(s.n_out);
        for (int r = 0; r < s.n_out; ++r) {
            T acc = tconst<T>(p[s.b + r], k);
            const double* wrow = p.data() + s.w + size_t(r) * s.n_in;
            for (int c = 0; c < s.n_in; ++c) acc = acc + wrow[c] * cur[c];
            next.push_back(acc);
        }
        const Fn fn = spec.activations[l];
        if (fn != Fn::Identity)
            for (auto& v : next) v = apply(fn, v);
        cur.swap(next);
    }
    return cur;
}

template std::vector<double> mlp_forward<double>(const MlpSpec&, std::span<const double>,
                                                 std::span<const double>);
template std::vector<Jet> mlp_forward<Jet>(const MlpSpec&, std::span<const double>,
                                           std::span<const Jet>);

std::vector<double> forward_lf(const MfModel& model, std::span<const double> in) {
    if (int(in.size()) != model.input_dim()) throw ContractError("forward_lf: input dim mismatch");
    std::vector<double> zn(in.size());
    for (size_t i = 0; i < in.size(); ++i) zn[i] = model.norm.apply(int(i), in[i]);
    return mlp_forward<double>(model.specs.lf, model.block_span(0), zn);
}

namespace {

template <class T>
MfOut<T> forward_mf_impl(const MfModel& model, std::span<const T> in) {
    if (int(in.size()) != model.input_dim())
        throw ContractError("forward_mf: input dim mismatch");
    const int k = in.empty() ? 0 : dirs_of(in[0]);
    std::vector<T> zn;
    zn.reserve(in.size());
    for (size_t i = 0; i < in.size(); ++i)
        zn.push_back(in[i] * model.norm.scale(int(i)) + model.norm.shift(int(i)));

    MfOut<T> o;
    o.u_lf = mlp_forward<T>(model.specs.lf, model.block_span(0), zn);
    const int out_dim = model.output_dim();

    if (model.kind == ModelKind::SingleNet) {
        o.u_mf = o.u_lf;
        o.alpha = tconst<T>(0.5, k);
        o.u_lin.assign(out_dim, tconst<T>(0.0, k));
        o.u_nl = o.u_lin;
        return o;
    }

    std::vector<T> z = zn;
    z.insert(z.end(), o.u_lf.begin(), o.u_lf.end());
    o.u_lin = mlp_forward<T>(model.specs.lin, model.block_span(1), std::span<const T>(z));
    o.u_nl = mlp_forward<T>(model.specs.nl, model.block_span(2), std::span<const T>(z));

    if (model.gate_mode == GateMode::Learned) {
        auto logit = mlp_forward<T>(model.specs.gate, model.block_span(3), std::span<const T>(z));
        if constexpr (std::is_same_v<T, Jet>)
            o.alpha = ad::sigmoid(logit[0]);
        else
            o.alpha = ad::sigmoid_value(logit[0]);
    } else {
        o.alpha = tconst<T>(model.alpha_of_logit(0.0), k);
    }

    o.u_mf.reserve(out_dim);
    for (int i = 0; i < out_dim; ++i)
        o.u_mf.push_back(o.u_lf[i] + o.alpha * o.u_lin[i] +
                         (1.0 - o.alpha) * o.u_nl[i]);
    return o;
}

} // namespace

MfOut<double> forward_mf(const MfModel& model, std::span<const double> in) {
    return forward_mf_impl<double>(model, in);
}

MfOut<Jet> forward_mf_jet(const MfModel& model, std::span<const Jet> in) {
    return forward_mf_impl<Jet>(model, in);
}

namespace {

ad::Range build_mlp_tape(const MlpSpec& spec, size_t base, ad::Tape& tape, ad::Range in) {
    auto slots = layer_slots(spec, base);
    ad::Range cur = in;
    for (int l = 0; l < spec.n_affine(); ++l) {
        cur = tape.affine(cur, slots[l].n_out, slots[l].w, slots[l].b);
        if (spec.activations[l] != Fn::Identity) cur = tape.act(cur, spec.activations[l]);
    }
    return cur;
}

} // namespace

MfTaped build_mf_tape(const MfModel& model, ad::Tape& tape, ad::Range coords) {
    if (coords.n != model.input_dim())
        throw ContractError("build_mf_tape: input dim mismatch");

    // normalized inputs, emitted back to back so they form one affine input range
    ad::Range zn{ad::VarId(0), coords.n};
    for (int i = 0; i < coords.n; ++i) {
        ad::VarId id = tape.axpb(coords[i], model.norm.scale(i), model.norm.shift(i));
        if (i == 0) zn.start = id;
    }

    MfTaped out;
    auto blocks = model.blocks();
    out.u_lf = build_mlp_tape(model.specs.lf, blocks[0].first, tape, zn);

    if (model.kind == ModelKind::SingleNet) {
        out.u_mf = out.u_lf;
        out.alpha = tape.constant(0.5);
        out.u_lin = {out.u_lf.start, 0};
        out.u_nl = {out.u_lf.start, 0};
        return out;
    }

    // feature vector [zn..., u_lf...], re-emitted contiguously
    ad::Range z{ad::VarId(0), coords.n + out.u_lf.n};
    for (int i = 0; i < coords.n; ++i) {
        ad::VarId id = tape.axpb(zn[i], 1.0, 0.0);
        if (i == 0) z.start = id;
    }
    for (int i = 0; i < out.u_lf.n; ++i) tape.axpb(out.u_lf[i], 1.0, 0.0);

    out.u_lin = build_mlp_tape(model.specs.lin, blocks[1].first, tape, z);
    out.u_nl = build_mlp_tape(model.specs.nl, blocks[2].first, tape, z);

    if (model.gate_mode == GateMode::Learned) {
        ad::Range logit = build_mlp_tape(model.specs.gate, blocks[3].first, tape, z);
        out.alpha = tape.unary(Fn::Sigmoid, logit[0]);
    } else {
        out.alpha = tape.constant(model.alpha_of_logit(0.0));
    }
    ad::VarId one_minus = tape.axpb(out.alpha, -1.0, 1.0);

    const int out_dim = model.output_dim();
    std::vector<ad::VarId> combined(out_dim);
    for (int i = 0; i < out_dim; ++i) {
        ad::VarId c = tape.add(tape.mul(out.alpha, out.u_lin[i]),
                               tape.mul(one_minus, out.u_nl[i]));
        combined[i] = tape.add(out.u_lf[i], c);
    }
    out.u_mf = {ad::VarId(0), out_dim};
    for (int i = 0; i < out_dim; ++i) {
        ad::VarId id = tape.axpb(combined[i], 1.0, 0.0);
        if (i == 0) out.u_mf.start = id;
    }
    return out;
}

namespace {

json spec_to_json(const MlpSpec& s) {
    json j;
    j["widths"] = s.layer_widths;
    std::vector<std::string> acts;
    for (Fn f : s.activations) acts.emplace_back(fn_name(f));
    j["activations"] = acts;
    return j;
}

MlpSpec spec_from_json(const json& j) {
    MlpSpec s;
    s.layer_widths = j.at("widths").get<std::vector<int>>();
    for (const auto& a : j.at("activations")) s.activations.push_back(fn_from_name(a));
    s.validate();
    return s;
}

const char* gate_mode_name(GateMode m) {
    switch (m) {
        case GateMode::Learned: return "learned";
        case GateMode::FixedHalf: return "fixed_half";
        case GateMode::AlphaOne: return "alpha_one";
        case GateMode::AlphaZero: return "alpha_zero";
    }
    throw ContractError("gate_mode_name: unknown mode");
}

GateMode gate_mode_from_name(const std::string& s) {
    if (s == "learned") return GateMode::Learned;
    if (s == "fixed_half") return GateMode::FixedHalf;
    if (s == "alpha_one") return GateMode::AlphaOne;
    if (s == "alpha_zero") return GateMode::AlphaZero;
    throw ConfigError("unknown gate mode: " + s);
}

} // namespace

std::string save_checkpoint(const MfModel& model) {
    json j;
    j["format"] = "mfbpinn-checkpoint";
    j["version"] = 1;
    j["kind"] = model.kind == ModelKind::Full ? "full" : "single";
    j["gate_mode"] = gate_mode_name(model.gate_mode);
    j["init_seed"] = model.init_seed;
    j["norm"] = {{"lo", model.norm.lo}, {"hi", model.norm.hi}};
    j["specs"] = {{"lf", spec_to_json(model.specs.lf)},
                  {"lin", spec_to_json(model.specs.lin)},
                  {"nl", spec_to_json(model.specs.nl)},
                  {"gate", spec_to_json(model.specs.gate)}};
    j["params"] = model.params;
    return j.dump();
}

MfModel load_checkpoint(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint parse error: ") + e.what());
    }
    try {
        if (j.at("format") != "mfbpinn-checkpoint") throw ConfigError("not a checkpoint file");
        if (j.at("version") != 1) throw ConfigError("unsupported checkpoint version");
        MfModel m;
        m.kind = j.at("kind") == "single" ? ModelKind::SingleNet : ModelKind::Full;
        m.gate_mode = gate_mode_from_name(j.at("gate_mode"));
        m.init_seed = j.at("init_seed").get<uint64_t>();
        m.norm.lo = j.at("norm").at("lo").get<std::vector<double>>();
        m.norm.hi = j.at("norm").at("hi").get<std::vector<double>>();
        const auto& sp = j.at("specs");
        m.specs.lf = spec_from_json(sp.at("lf"));
        if (m.kind == ModelKind::Full) {
            m.specs.lin = spec_from_json(sp.at("lin"));
            m.specs.nl = spec_from_json(sp.at("nl"));
            m.specs.gate = spec_from_json(sp.at("gate"));
        }
        m.params = j.at("params").get<std::vector<double>>();
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint field error: ") + e.what());
    }
}

void write_checkpoint(const MfModel& model, const std::string& path) {
    atomic_write_file(path, save_checkpoint(model));
}

MfModel read_checkpoint(const std::string& path) { return load_checkpoint(read_file(path)); }

} // namespace mfb
