#pragma once

// Small dense-network toolkit: layers with hand-written backward passes,
// named parameter storage and an Adam optimizer. Only the fixed architectures
// used by the world models, critics and policy are supported.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/random.hpp"

namespace wimle {

#ifdef WIMLE_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// Guard used by l2_normalize for (near-)zero vectors.
inline constexpr Real kNormEpsilon = Real(1e-8);

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

/// input [batch x in] * weight [in x out] + bias [1 x out].
inline Matrix dense_forward(const Matrix& input, const Matrix& weight, const Matrix& bias)
{
    detail::require_dims(input.cols() == weight.rows(),
                         "dense_forward: input has " + std::to_string(input.cols()) +
                             " columns, weight expects " + std::to_string(weight.rows()));
    detail::require_dims(bias.rows() == 1 && bias.cols() == weight.cols(),
                         "dense_forward: bias must be 1 x " + std::to_string(weight.cols()));
    Matrix out = input * weight;
    out.rowwise() += bias.row(0);
    return out;
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(Real(0)); }

/// Subgradient of relu; 0 at the kink.
inline Matrix relu_grad(const Matrix& pre)
{
    return (pre.array() > Real(0)).cast<Real>().matrix();
}

inline Vector l2_normalize(const Vector& x, Real eps = kNormEpsilon)
{
    return x / std::max(x.norm(), eps);
}

/// Row-wise l2 normalization; `norms` receives the unguarded row norms.
inline Matrix l2_normalize_rows(const Matrix& x, Vector* norms = nullptr, Real eps = kNormEpsilon)
{
    Vector n = x.rowwise().norm();
    Matrix out = x;
    for (Index i = 0; i < x.rows(); ++i) out.row(i) /= std::max(n(i), eps);
    if (norms) *norms = std::move(n);
    return out;
}

/// l2_normalize_rows(x + relu(x W1 + b1) W2 + b2).
inline Matrix residual_block_forward(const Matrix& x, const Matrix& w1, const Matrix& b1, const Matrix& w2,
                                     const Matrix& b2)
{
    detail::require_dims(w2.cols() == x.cols(), "residual_block_forward: block must preserve width");
    return l2_normalize_rows(x + dense_forward(relu(dense_forward(x, w1, b1)), w2, b2));
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

using Gradients = std::vector<Matrix>;

/// Ordered, named parameter tensors. Names are unique and shapes are fixed
/// once a tensor is added; values are edited through shape-preserving maps.
class ParameterSet {
public:
    std::size_t add(std::string name, Matrix init)
    {
        if (find(name)) throw ContractError("duplicate parameter name: " + name);
        names_.push_back(std::move(name));
        values_.push_back(std::move(init));
        return values_.size() - 1;
    }

    std::size_t size() const noexcept { return values_.size(); }

    std::size_t count() const noexcept
    {
        std::size_t n = 0;
        for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
        return n;
    }

    const std::string& name(std::size_t i) const { return names_.at(i); }
    const Matrix& operator[](std::size_t i) const { return values_.at(i); }
    Eigen::Map<Matrix> value(std::size_t i)
    {
        auto& m = values_.at(i);
        return Eigen::Map<Matrix>(m.data(), m.rows(), m.cols());
    }

    std::optional<std::size_t> find(const std::string& name) const
    {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return i;
        return std::nullopt;
    }

    Gradients zeros_like() const
    {
        Gradients g;
        g.reserve(values_.size());
        for (const auto& v : values_) g.push_back(Matrix::Zero(v.rows(), v.cols()));
        return g;
    }

    std::vector<Real> flatten() const
    {
        std::vector<Real> flat;
        flat.reserve(count());
        for (const auto& v : values_) flat.insert(flat.end(), v.data(), v.data() + v.size());
        return flat;
    }

    void assign(std::span<const Real> flat)
    {
        detail::require_dims(flat.size() == count(), "ParameterSet::assign: flat size mismatch");
        std::size_t off = 0;
        for (auto& v : values_) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.data());
            off += static_cast<std::size_t>(v.size());
        }
    }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(),
                           [](const Matrix& m) { return m.allFinite(); });
    }

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
};

inline bool all_finite(const Gradients& g)
{
    return std::all_of(g.begin(), g.end(), [](const Matrix& m) { return m.allFinite(); });
}

inline void set_zero(Gradients& g)
{
    for (auto& m : g) m.setZero();
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Shape of a network. `residual` is the world-model body: an input projection,
/// `depth` residual blocks (width -> 2*width -> width, skip-add, row l2-norm)
/// and linear heads. `mlp` is `depth` ReLU hidden layers followed by linear heads.
struct Architecture {
    enum class Kind { mlp, residual };

    Kind kind = Kind::mlp;
    int input = 1;
    int width = 64;
    int depth = 2;
    std::vector<int> heads{1};
    std::vector<std::string> head_names{"out"};

    int output() const
    {
        int n = 0;
        for (int h : heads) n += h;
        return n;
    }

    bool operator==(const Architecture&) const = default;
};

struct InitOptions {
    /// Zero the output heads (weights and biases).
    bool zero_heads = false;
    /// Multiplies the fan-in bound of the head weights.
    Real head_scale = 1;
};

/// Forward/backward work performed by one network, in batch rows.
struct PassCounter {
    std::uint64_t forward_rows = 0;
    std::uint64_t backward_rows = 0;

    void reset() noexcept { *this = {}; }
};

/// Activations recorded by Network::forward for a subsequent backward call.
struct Tape {
    std::vector<std::vector<Matrix>> saved;
    Index rows = -1;

    bool empty() const noexcept { return rows < 0; }
};

class Network {
    struct DenseLayer {
        std::size_t weight, bias;
    };
    struct ReluLayer {};
    struct ResidualLayer {
        DenseLayer fc1, fc2;
    };
    struct HeadsLayer {
        std::vector<DenseLayer> heads;
    };
    using Layer = std::variant<DenseLayer, ReluLayer, ResidualLayer, HeadsLayer>;

public:
    Network() = default;

    Network(Architecture arch, Rng& rng, InitOptions init = {}) : arch_(std::move(arch))
    {
        detail::require(arch_.input >= 1 && arch_.width >= 1 && arch_.depth >= 0,
                        "Architecture: widths must be positive");
        detail::require(!arch_.heads.empty() && arch_.heads.size() == arch_.head_names.size(),
                        "Architecture: one name per head");
        for (int h : arch_.heads) detail::require(h >= 1, "Architecture: head width must be positive");

        const int w = arch_.width;
        if (arch_.kind == Architecture::Kind::residual) {
            layers_.emplace_back(make_dense("input", arch_.input, w, rng));
            for (int b = 0; b < arch_.depth; ++b) {
                const std::string p = "block" + std::to_string(b);
                layers_.emplace_back(ResidualLayer{make_dense(p + ".fc1", w, 2 * w, rng),
                                                   make_dense(p + ".fc2", 2 * w, w, rng)});
            }
        } else {
            int in = arch_.input;
            for (int l = 0; l < arch_.depth; ++l) {
                layers_.emplace_back(make_dense("fc" + std::to_string(l), in, w, rng));
                layers_.emplace_back(ReluLayer{});
                in = w;
            }
        }
        const int feat = (arch_.kind == Architecture::Kind::mlp && arch_.depth == 0) ? arch_.input : w;
        HeadsLayer heads;
        for (std::size_t h = 0; h < arch_.heads.size(); ++h)
            heads.heads.push_back(make_dense("head." + arch_.head_names[h], feat, arch_.heads[h], rng,
                                             init.zero_heads ? Real(0) : init.head_scale));
        layers_.emplace_back(std::move(heads));
    }

    const Architecture& architecture() const noexcept { return arch_; }
    ParameterSet& parameters() noexcept { return params_; }
    const ParameterSet& parameters() const noexcept { return params_; }
    Gradients zero_gradients() const { return params_.zeros_like(); }

    PassCounter& counter() const noexcept { return counter_; }

    /// Evaluates the network on a batch. When `tape` is given, the activations
    /// needed by backward() are recorded into it.
    Matrix forward(const Matrix& x, Tape* tape = nullptr) const
    {
        detail::require_dims(x.cols() == arch_.input,
                             "Network::forward: expected " + std::to_string(arch_.input) +
                                 " input columns, got " + std::to_string(x.cols()));
        counter_.forward_rows += static_cast<std::uint64_t>(x.rows());
        if (tape) {
            tape->saved.assign(layers_.size(), {});
            tape->rows = x.rows();
        }
        Matrix h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto* saved = tape ? &tape->saved[l] : nullptr;
            h = std::visit([&](const auto& layer) { return apply(layer, h, saved); }, layers_[l]);
        }
        return h;
    }

    /// Back-propagates `grad_out` (dLoss/dOutput) through the recorded pass.
    /// Parameter gradients are accumulated into `grads`; returns dLoss/dInput.
    Matrix backward(const Tape& tape, const Matrix& grad_out, Gradients& grads) const
    {
        if (tape.empty() || tape.saved.size() != layers_.size())
            throw UsageError("Network::backward: no recorded forward pass for this network");
        detail::require_dims(grad_out.rows() == tape.rows && grad_out.cols() == arch_.output(),
                             "Network::backward: upstream gradient shape mismatch");
        detail::require_dims(grads.size() == params_.size(), "Network::backward: gradient buffer mismatch");
        counter_.backward_rows += static_cast<std::uint64_t>(grad_out.rows());
        Matrix g = grad_out;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const auto& saved = tape.saved[l];
            g = std::visit([&](const auto& layer) { return back(layer, saved, g, grads); }, layers_[l]);
        }
        return g;
    }

private:
    DenseLayer make_dense(const std::string& name, int in, int out, Rng& rng, Real scale = 1)
    {
        const Real bound = scale / std::sqrt(static_cast<Real>(in));
        std::uniform_real_distribution<Real> u(-1, 1);
        Matrix w(in, out), b(1, out);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = bound * u(rng);
        for (Index i = 0; i < b.size(); ++i) b.data()[i] = bound * u(rng);
        DenseLayer d;
        d.weight = params_.add(name + ".weight", std::move(w));
        d.bias = params_.add(name + ".bias", std::move(b));
        return d;
    }

    Matrix apply(const DenseLayer& d, const Matrix& x, std::vector<Matrix>* saved) const
    {
        if (saved) saved->push_back(x);
        return dense_forward(x, params_[d.weight], params_[d.bias]);
    }

    Matrix apply(const ReluLayer&, const Matrix& x, std::vector<Matrix>* saved) const
    {
        if (saved) saved->push_back(x);
        return relu(x);
    }

    Matrix apply(const ResidualLayer& r, const Matrix& x, std::vector<Matrix>* saved) const
    {
        Matrix h1 = dense_forward(x, params_[r.fc1.weight], params_[r.fc1.bias]);
        Matrix a1 = relu(h1);
        Matrix v = x + dense_forward(a1, params_[r.fc2.weight], params_[r.fc2.bias]);
        Vector norms;
        Matrix y = l2_normalize_rows(v, &norms);
        if (saved) {
            saved->push_back(x);
            saved->push_back(std::move(h1));
            saved->push_back(std::move(a1));
            saved->push_back(std::move(norms));
            saved->push_back(y);
        }
        return y;
    }

    Matrix apply(const HeadsLayer& hl, const Matrix& x, std::vector<Matrix>* saved) const
    {
        if (saved) saved->push_back(x);
        Matrix out(x.rows(), arch_.output());
        Index col = 0;
        for (const auto& d : hl.heads) {
            const Index w = params_[d.weight].cols();
            out.middleCols(col, w) = dense_forward(x, params_[d.weight], params_[d.bias]);
            col += w;
        }
        return out;
    }

    static Matrix dense_back(const DenseLayer& d, const ParameterSet& p, const Matrix& in,
                             const Matrix& g, Gradients& grads)
    {
        grads[d.weight].noalias() += in.transpose() * g;
        grads[d.bias] += g.colwise().sum();
        return g * p[d.weight].transpose();
    }

    Matrix back(const DenseLayer& d, const std::vector<Matrix>& saved, const Matrix& g, Gradients& grads) const
    {
        return dense_back(d, params_, saved[0], g, grads);
    }

    Matrix back(const ReluLayer&, const std::vector<Matrix>& saved, const Matrix& g, Gradients&) const
    {
        return g.cwiseProduct(relu_grad(saved[0]));
    }

    Matrix back(const ResidualLayer& r, const std::vector<Matrix>& saved, const Matrix& g,
                Gradients& grads) const
    {
        const Matrix& x = saved[0];
        const Matrix& h1 = saved[1];
        const Matrix& a1 = saved[2];
        const Matrix& norms = saved[3];
        const Matrix& y = saved[4];

        Matrix gv(g.rows(), g.cols());
        for (Index i = 0; i < g.rows(); ++i) {
            const Real n = norms(i, 0);
            if (n >= kNormEpsilon)
                gv.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / n;
            else
                gv.row(i) = g.row(i) / kNormEpsilon;
        }
        Matrix ga1 = dense_back(r.fc2, params_, a1, gv, grads);
        Matrix gh1 = ga1.cwiseProduct(relu_grad(h1));
        Matrix gx = dense_back(r.fc1, params_, x, gh1, grads);
        gx += gv;
        return gx;
    }

    Matrix back(const HeadsLayer& hl, const std::vector<Matrix>& saved, const Matrix& g,
                Gradients& grads) const
    {
        const Matrix& x = saved[0];
        Matrix gx = Matrix::Zero(x.rows(), x.cols());
        Index col = 0;
        for (const auto& d : hl.heads) {
            const Index w = params_[d.weight].cols();
            gx += dense_back(d, params_, x, g.middleCols(col, w), grads);
            col += w;
        }
        return gx;
    }

    Architecture arch_;
    ParameterSet params_;
    std::vector<Layer> layers_;
    mutable PassCounter counter_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    Real lr = Real(1e-3);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
};

struct AdamState {
    AdamConfig config;
    Gradients m;
    Gradients v;
    std::int64_t step = 0;

    AdamState() = default;
    AdamState(const ParameterSet& params, AdamConfig cfg)
        : config(cfg), m(params.zeros_like()), v(params.zeros_like())
    {
    }
};

/// One bias-corrected Adam update. A non-finite gradient leaves parameters
/// and state untouched and raises NumericError.
inline void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state)
{
    detail::require_dims(grads.size() == params.size() && state.m.size() == params.size() &&
                             state.v.size() == params.size(),
                         "adam_step: gradient/state count does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        detail::require_dims(grads[i].rows() == params[i].rows() && grads[i].cols() == params[i].cols() &&
                                 state.m[i].rows() == params[i].rows() && state.m[i].cols() == params[i].cols(),
                             "adam_step: shape mismatch for " + params.name(i));
    if (!all_finite(grads)) throw NumericError("adam_step: non-finite gradient, update rejected");

    const auto& c = state.config;
    ++state.step;
    const Real bc1 = 1 - std::pow(c.beta1, static_cast<Real>(state.step));
    const Real bc2 = 1 - std::pow(c.beta2, static_cast<Real>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = c.beta1 * state.m[i] + (1 - c.beta1) * grads[i];
        state.v[i] = c.beta2 * state.v[i] + (1 - c.beta2) * grads[i].cwiseAbs2();
        auto p = params.value(i);
        p.array() -= c.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.eps);
    }
}

}  // namespace wimle
