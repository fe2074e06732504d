#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hieremb/rng.hpp"
#include "hieremb/tensor.hpp"

namespace hieremb {

/// A trainable tensor with its gradient and Adam moment buffers.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    std::int64_t step_count = 0;

    static Parameter make(std::string name, std::vector<std::size_t> shape);

    void init_uniform(Rng& rng, double bound);
    /// uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    void init_fan_in(Rng& rng, std::size_t fan_in);
};

/// LSTM layer parameters: one stacked weight for input and recurrent paths,
/// shape (input_dim + hidden) x (4 * hidden), gate column order [i, f, g, o].
struct LstmParams {
    Parameter w;
    Parameter b;

    static LstmParams make(const std::string& prefix, std::size_t input_dim, std::size_t hidden);
    std::size_t hidden() const { return b.value.size() / 4; }
    std::size_t input_dim() const { return w.value.rows() - hidden(); }
};

struct LstmLayerState {
    Tensor hidden;
    Tensor cell;

    static LstmLayerState zeros(std::size_t batch, std::size_t hidden_size);
};

/// Reverse-mode tape over exactly the operations the model needs. One graph
/// instance covers one forward/backward episode; parameter gradients are
/// accumulated directly into Parameter::grad, so a graph can be used per
/// sequence and discarded while gradients build up across a batch.
/// Constructed with record=false it skips all backward bookkeeping.
class Graph {
public:
    using Var = std::size_t;

    explicit Graph(bool record = true) : record_(record) {}

    Var leaf(Tensor value);
    const Tensor& value(Var v) const { return nodes_[v].value; }

    /// Rows of `table` selected by ids; backward scatters into the rows.
    Var gather_rows(Parameter& table, std::vector<std::int32_t> ids);

    Var concat_cols(std::span<const Var> parts);

    /// y = x W + b (b broadcast over rows).
    Var affine(Var x, Parameter& w, Parameter& b);

    Var tanh_activation(Var x);

    /// Output layer tied to the embedding table: y = x E^T + bias.
    Var tied_logits(Var x, Parameter& table, Parameter& bias);

    /// One LSTM cell step; returns (hidden, cell) nodes.
    std::pair<Var, Var> lstm_step(Var x, Var h_prev, Var c_prev, LstmParams& p);

    /// Full layer over a T-step input (T x input_dim) from zero initial
    /// state; returns the T x hidden output. Backward runs BPTT.
    Var lstm_sequence(Var xs, LstmParams& p);

    /// Sum over rows of -log softmax(row)[target]; natural log,
    /// max-subtracted for stability.
    Var softmax_xent_sum(Var logits, std::vector<std::int32_t> targets);

    Var add(Var a, Var b);  // elementwise, same shape
    Var sum(Var x);         // scalar sum of all elements

    void backward(Var root, double seed = 1.0);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        std::function<void(Graph&)> back;
    };

    Tensor& grad_of(Var v);
    void accumulate(Var v, const double* data, std::size_t n);

    std::vector<Node> nodes_;
    bool record_;
};

double softmax_xent_value(std::span<const double> logits, std::size_t target);
std::vector<double> softmax(std::span<const double> logits);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

void zero_grads(std::span<Parameter* const> params);

/// Scales all gradients by max_norm / ||g|| when the global L2 norm exceeds
/// max_norm; returns the applied factor.
double clip_global_norm(std::span<Parameter* const> params, double max_norm);

/// Standard Adam with bias correction. Throws DivergenceError on non-finite
/// gradients.
void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg);

struct FdReport {
    struct Entry {
        std::string param;
        std::size_t index = 0;
        double analytic = 0.0;
        double numeric = 0.0;
        double rel_err = 0.0;
    };
    double max_rel_err = 0.0;
    Entry worst;
    std::size_t checked = 0;

    bool empty() const { return checked == 0; }
};

/// Central finite differences (h = 1e-5 scaled by parameter magnitude)
/// against the gradients produced by `forward_backward`. `forward` must be a
/// pure loss evaluation at the current parameter values. Failures are
/// reported, never thrown.
FdReport finite_difference_check(std::span<Parameter* const> params,
                                 const std::function<double()>& forward,
                                 const std::function<double()>& forward_backward);

}  // namespace hieremb
