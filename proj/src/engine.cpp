#include "hieremb/engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hieremb/errors.hpp"

namespace hieremb {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

MapC cmat(const Tensor& t) {
    return MapC(t.v.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MapM mmat(Tensor& t) {
    return MapM(t.v.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(std::string("engine: ") + msg);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Parameter Parameter::make(std::string name, std::vector<std::size_t> shape) {
    Parameter p;
    p.name = std::move(name);
    p.value = Tensor::zeros(shape);
    p.grad = Tensor::zeros(shape);
    p.adam_m = Tensor::zeros(shape);
    p.adam_v = Tensor::zeros(std::move(shape));
    return p;
}

void Parameter::init_uniform(Rng& rng, double bound) {
    for (double& x : value.v) x = rng.uniform(-bound, bound);
}

void Parameter::init_fan_in(Rng& rng, std::size_t fan_in) {
    init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

LstmParams LstmParams::make(const std::string& prefix, std::size_t input_dim, std::size_t hidden) {
    LstmParams p;
    p.w = Parameter::make(prefix + ".w", {input_dim + hidden, 4 * hidden});
    p.b = Parameter::make(prefix + ".b", {4 * hidden});
    return p;
}

LstmLayerState LstmLayerState::zeros(std::size_t batch, std::size_t hidden_size) {
    return {Tensor::zeros({batch, hidden_size}), Tensor::zeros({batch, hidden_size})};
}

Tensor& Graph::grad_of(Var v) {
    Node& n = nodes_[v];
    if (n.grad.v.empty()) {
        n.grad = Tensor::zeros(n.value.shape);
    }
    return n.grad;
}

void Graph::accumulate(Var v, const double* data, std::size_t n) {
    Tensor& g = grad_of(v);
    for (std::size_t i = 0; i < n; ++i) g.v[i] += data[i];
    nodes_[v].has_grad = true;
}

Graph::Var Graph::leaf(Tensor value) {
    nodes_.push_back({std::move(value), {}, false, nullptr});
    return nodes_.size() - 1;
}

Graph::Var Graph::gather_rows(Parameter& table, std::vector<std::int32_t> ids) {
    require(table.value.shape.size() == 2, "gather_rows: table must be 2-d");
    const std::size_t rows = table.value.rows();
    const std::size_t cols = table.value.cols();
    Tensor out = Tensor::zeros({ids.size(), cols});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < rows, "gather_rows: id out of range");
        std::copy_n(table.value.row_ptr(static_cast<std::size_t>(ids[i])), cols, out.row_ptr(i));
    }
    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, &table, ids = std::move(ids)](Graph& g) {
            const Tensor& go = g.nodes_[v].grad;
            const std::size_t cols = table.value.cols();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = table.grad.row_ptr(static_cast<std::size_t>(ids[i]));
                const double* src = go.row_ptr(i);
                for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
            }
        };
    }
    return v;
}

Graph::Var Graph::concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = nodes_[parts[0]].value.rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        require(nodes_[p].value.shape.size() == 2, "concat_cols: inputs must be 2-d");
        require(nodes_[p].value.rows() == rows, "concat_cols: row mismatch");
        cols += nodes_[p].value.cols();
    }
    Tensor out = Tensor::zeros({rows, cols});
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& t = nodes_[p].value;
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(t.row_ptr(r), t.cols(), out.row_ptr(r) + offset);
        offset += t.cols();
    }
    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        std::vector<Var> inputs(parts.begin(), parts.end());
        nodes_[v].back = [v, inputs = std::move(inputs)](Graph& g) {
            const Tensor& go = g.nodes_[v].grad;
            const std::size_t rows = go.rows();
            std::size_t offset = 0;
            for (Var p : inputs) {
                Tensor& gi = g.grad_of(p);
                const std::size_t c = gi.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* src = go.row_ptr(r) + offset;
                    double* dst = gi.row_ptr(r);
                    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                }
                g.nodes_[p].has_grad = true;
                offset += c;
            }
        };
    }
    return v;
}

Graph::Var Graph::affine(Var x, Parameter& w, Parameter& b) {
    const Tensor& xv = nodes_[x].value;
    require(xv.shape.size() == 2 && w.value.shape.size() == 2, "affine: inputs must be 2-d");
    require(xv.cols() == w.value.rows(), "affine: inner dimension mismatch");
    require(b.value.size() == w.value.cols(), "affine: bias width mismatch");

    Tensor out = Tensor::zeros({xv.rows(), w.value.cols()});
    mmat(out).noalias() = cmat(xv) * cmat(w.value);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double* row = out.row_ptr(r);
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] += b.value.v[j];
    }
    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, x, &w, &b](Graph& g) {
            const Tensor& go = g.nodes_[v].grad;
            const Tensor& xv = g.nodes_[x].value;
            Tensor& gx = g.grad_of(x);
            mmat(gx).noalias() += cmat(go) * cmat(w.value).transpose();
            g.nodes_[x].has_grad = true;
            MapM(w.grad.v.data(), static_cast<Eigen::Index>(w.grad.rows()),
                 static_cast<Eigen::Index>(w.grad.cols()))
                .noalias() += cmat(xv).transpose() * cmat(go);
            for (std::size_t r = 0; r < go.rows(); ++r) {
                const double* row = go.row_ptr(r);
                for (std::size_t j = 0; j < go.cols(); ++j) b.grad.v[j] += row[j];
            }
        };
    }
    return v;
}

Graph::Var Graph::tanh_activation(Var x) {
    Tensor out = nodes_[x].value;
    for (double& e : out.v) e = std::tanh(e);
    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, x](Graph& g) {
            const Tensor& go = g.nodes_[v].grad;
            const Tensor& yv = g.nodes_[v].value;
            Tensor& gx = g.grad_of(x);
            for (std::size_t i = 0; i < go.v.size(); ++i)
                gx.v[i] += go.v[i] * (1.0 - yv.v[i] * yv.v[i]);
            g.nodes_[x].has_grad = true;
        };
    }
    return v;
}

Graph::Var Graph::tied_logits(Var x, Parameter& table, Parameter& bias) {
    const Tensor& xv = nodes_[x].value;
    require(xv.shape.size() == 2 && table.value.shape.size() == 2, "tied_logits: inputs must be 2-d");
    require(xv.cols() == table.value.cols(), "tied_logits: embedding width mismatch");
    require(bias.value.size() == table.value.rows(), "tied_logits: bias width mismatch");

    Tensor out = Tensor::zeros({xv.rows(), table.value.rows()});
    mmat(out).noalias() = cmat(xv) * cmat(table.value).transpose();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double* row = out.row_ptr(r);
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] += bias.value.v[j];
    }
    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, x, &table, &bias](Graph& g) {
            const Tensor& go = g.nodes_[v].grad;
            const Tensor& xv = g.nodes_[x].value;
            Tensor& gx = g.grad_of(x);
            mmat(gx).noalias() += cmat(go) * cmat(table.value);
            g.nodes_[x].has_grad = true;
            mmat(table.grad).noalias() += cmat(go).transpose() * cmat(xv);
            for (std::size_t r = 0; r < go.rows(); ++r) {
                const double* row = go.row_ptr(r);
                for (std::size_t j = 0; j < go.cols(); ++j) bias.grad.v[j] += row[j];
            }
        };
    }
    return v;
}

namespace {

struct LstmStepCache {
    Tensor gates;   // n x 4H, post-activation, columns [i | f | g | o]
    Tensor tanh_c;  // n x H
    Tensor dz;      // n x 4H, filled during backward
};

}  // namespace

std::pair<Graph::Var, Graph::Var> Graph::lstm_step(Var x, Var h_prev, Var c_prev, LstmParams& p) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& hv = nodes_[h_prev].value;
    const Tensor& cv = nodes_[c_prev].value;
    const std::size_t hidden = p.hidden();
    const std::size_t in_dim = p.input_dim();
    const std::size_t n = xv.rows();
    require(xv.cols() == in_dim, "lstm_step: input width mismatch");
    require(hv.rows() == n && hv.cols() == hidden, "lstm_step: hidden state shape mismatch");
    require(cv.rows() == n && cv.cols() == hidden, "lstm_step: cell state shape mismatch");

    auto cache = std::make_shared<LstmStepCache>();
    cache->gates = Tensor::zeros({n, 4 * hidden});
    cache->tanh_c = Tensor::zeros({n, hidden});

    // z = [x | h] W + b
    MapC wx(p.w.value.v.data(), static_cast<Eigen::Index>(in_dim), static_cast<Eigen::Index>(4 * hidden));
    MapC wh(p.w.value.v.data() + in_dim * 4 * hidden, static_cast<Eigen::Index>(hidden),
            static_cast<Eigen::Index>(4 * hidden));
    mmat(cache->gates).noalias() = cmat(xv) * wx + cmat(hv) * wh;

    Tensor c_new = Tensor::zeros({n, hidden});
    Tensor h_new = Tensor::zeros({n, hidden});
    for (std::size_t r = 0; r < n; ++r) {
        double* z = cache->gates.row_ptr(r);
        const double* cp = cv.row_ptr(r);
        double* cn = c_new.row_ptr(r);
        double* hn = h_new.row_ptr(r);
        double* tc = cache->tanh_c.row_ptr(r);
        for (std::size_t j = 0; j < hidden; ++j) {
            double zi = sigmoid(z[j] + p.b.value.v[j]);
            double zf = sigmoid(z[hidden + j] + p.b.value.v[hidden + j]);
            double zg = std::tanh(z[2 * hidden + j] + p.b.value.v[2 * hidden + j]);
            double zo = sigmoid(z[3 * hidden + j] + p.b.value.v[3 * hidden + j]);
            z[j] = zi;
            z[hidden + j] = zf;
            z[2 * hidden + j] = zg;
            z[3 * hidden + j] = zo;
            cn[j] = zf * cp[j] + zi * zg;
            tc[j] = std::tanh(cn[j]);
            hn[j] = zo * tc[j];
        }
    }

    nodes_.push_back({std::move(c_new), {}, false, nullptr});
    Var c_var = nodes_.size() - 1;
    nodes_.push_back({std::move(h_new), {}, false, nullptr});
    Var h_var = nodes_.size() - 1;

    if (record_) {
        cache->dz = Tensor::zeros({n, 4 * hidden});

        // h = o * tanh(c'): route the tanh path into the c' node and stash
        // the o-gate pre-activation gradient for the c' backward to scatter.
        nodes_[h_var].back = [h_var, c_var, cache, hidden](Graph& g) {
            const Tensor& gh = g.nodes_[h_var].grad;
            const std::size_t n = gh.rows();
            Tensor& gc = g.grad_of(c_var);
            for (std::size_t r = 0; r < n; ++r) {
                const double* ghr = gh.row_ptr(r);
                const double* gates = cache->gates.row_ptr(r);
                const double* tc = cache->tanh_c.row_ptr(r);
                double* dz = cache->dz.row_ptr(r);
                double* gcr = gc.row_ptr(r);
                for (std::size_t j = 0; j < hidden; ++j) {
                    double o = gates[3 * hidden + j];
                    gcr[j] += ghr[j] * o * (1.0 - tc[j] * tc[j]);
                    dz[3 * hidden + j] += ghr[j] * tc[j] * o * (1.0 - o);
                }
            }
            g.nodes_[c_var].has_grad = true;
        };

        nodes_[c_var].back = [c_var, x, h_prev, c_prev, cache, &p, in_dim, hidden](Graph& g) {
            const Tensor& gc = g.nodes_[c_var].grad;
            const Tensor& cv = g.nodes_[c_prev].value;
            const std::size_t n = gc.rows();
            Tensor& gcp = g.grad_of(c_prev);
            for (std::size_t r = 0; r < n; ++r) {
                const double* gcr = gc.row_ptr(r);
                const double* gates = cache->gates.row_ptr(r);
                const double* cp = cv.row_ptr(r);
                double* dz = cache->dz.row_ptr(r);
                double* gcpr = gcp.row_ptr(r);
                for (std::size_t j = 0; j < hidden; ++j) {
                    double i = gates[j], f = gates[hidden + j], gg = gates[2 * hidden + j];
                    dz[j] += gcr[j] * gg * i * (1.0 - i);
                    dz[hidden + j] += gcr[j] * cp[j] * f * (1.0 - f);
                    dz[2 * hidden + j] += gcr[j] * i * (1.0 - gg * gg);
                    gcpr[j] += gcr[j] * f;
                }
            }
            g.nodes_[c_prev].has_grad = true;

            const Tensor& xv = g.nodes_[x].value;
            const Tensor& hv = g.nodes_[h_prev].value;
            MapC wx(p.w.value.v.data(), static_cast<Eigen::Index>(in_dim),
                    static_cast<Eigen::Index>(4 * hidden));
            MapC wh(p.w.value.v.data() + in_dim * 4 * hidden, static_cast<Eigen::Index>(hidden),
                    static_cast<Eigen::Index>(4 * hidden));
            MapM gwx(p.w.grad.v.data(), static_cast<Eigen::Index>(in_dim),
                     static_cast<Eigen::Index>(4 * hidden));
            MapM gwh(p.w.grad.v.data() + in_dim * 4 * hidden, static_cast<Eigen::Index>(hidden),
                     static_cast<Eigen::Index>(4 * hidden));

            Tensor& gx = g.grad_of(x);
            mmat(gx).noalias() += cmat(cache->dz) * wx.transpose();
            g.nodes_[x].has_grad = true;
            Tensor& ghp = g.grad_of(h_prev);
            mmat(ghp).noalias() += cmat(cache->dz) * wh.transpose();
            g.nodes_[h_prev].has_grad = true;
            gwx.noalias() += cmat(xv).transpose() * cmat(cache->dz);
            gwh.noalias() += cmat(hv).transpose() * cmat(cache->dz);
            for (std::size_t r = 0; r < n; ++r) {
                const double* dz = cache->dz.row_ptr(r);
                for (std::size_t j = 0; j < 4 * hidden; ++j) p.b.grad.v[j] += dz[j];
            }
        };
    }
    return {h_var, c_var};
}

namespace {

struct LstmSeqCache {
    Tensor gates;   // T x 4H post-activation
    Tensor cells;   // T x H
    Tensor tanh_c;  // T x H
};

}  // namespace

Graph::Var Graph::lstm_sequence(Var xs, LstmParams& p) {
    const Tensor& xv = nodes_[xs].value;
    const std::size_t hidden = p.hidden();
    const std::size_t in_dim = p.input_dim();
    const std::size_t steps = xv.rows();
    require(xv.cols() == in_dim, "lstm_sequence: input width mismatch");
    require(steps > 0, "lstm_sequence: empty input");

    auto cache = std::make_shared<LstmSeqCache>();
    cache->gates = Tensor::zeros({steps, 4 * hidden});
    cache->cells = Tensor::zeros({steps, hidden});
    cache->tanh_c = Tensor::zeros({steps, hidden});
    Tensor out = Tensor::zeros({steps, hidden});

    MapC wx(p.w.value.v.data(), static_cast<Eigen::Index>(in_dim), static_cast<Eigen::Index>(4 * hidden));
    MapC wh(p.w.value.v.data() + in_dim * 4 * hidden, static_cast<Eigen::Index>(hidden),
            static_cast<Eigen::Index>(4 * hidden));

    // input contribution for all steps at once, plus bias
    mmat(cache->gates).noalias() = cmat(xv) * wx;
    for (std::size_t t = 0; t < steps; ++t) {
        double* z = cache->gates.row_ptr(t);
        for (std::size_t j = 0; j < 4 * hidden; ++j) z[j] += p.b.value.v[j];
    }

    for (std::size_t t = 0; t < steps; ++t) {
        double* z = cache->gates.row_ptr(t);
        if (t > 0) {
            Eigen::Map<const Eigen::RowVectorXd> hprev(out.row_ptr(t - 1),
                                                       static_cast<Eigen::Index>(hidden));
            Eigen::Map<Eigen::RowVectorXd> zrow(z, static_cast<Eigen::Index>(4 * hidden));
            zrow.noalias() += hprev * wh;
        }
        const double* cp = t > 0 ? cache->cells.row_ptr(t - 1) : nullptr;
        double* cn = cache->cells.row_ptr(t);
        double* tc = cache->tanh_c.row_ptr(t);
        double* hn = out.row_ptr(t);
        for (std::size_t j = 0; j < hidden; ++j) {
            double zi = sigmoid(z[j]);
            double zf = sigmoid(z[hidden + j]);
            double zg = std::tanh(z[2 * hidden + j]);
            double zo = sigmoid(z[3 * hidden + j]);
            z[j] = zi;
            z[hidden + j] = zf;
            z[2 * hidden + j] = zg;
            z[3 * hidden + j] = zo;
            cn[j] = zf * (cp ? cp[j] : 0.0) + zi * zg;
            tc[j] = std::tanh(cn[j]);
            hn[j] = zo * tc[j];
        }
    }

    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, xs, cache, &p, in_dim, hidden](Graph& g) {
            const Tensor& gh_out = g.nodes_[v].grad;
            const Tensor& hs = g.nodes_[v].value;
            const Tensor& xv = g.nodes_[xs].value;
            const std::size_t steps = gh_out.rows();

            Tensor dz = Tensor::zeros({steps, 4 * hidden});
            std::vector<double> dh_carry(hidden, 0.0), dc_carry(hidden, 0.0);

            MapC wh(p.w.value.v.data() + in_dim * 4 * hidden, static_cast<Eigen::Index>(hidden),
                    static_cast<Eigen::Index>(4 * hidden));

            for (std::size_t ti = steps; ti-- > 0;) {
                const double* gates = cache->gates.row_ptr(ti);
                const double* tc = cache->tanh_c.row_ptr(ti);
                const double* cp = ti > 0 ? cache->cells.row_ptr(ti - 1) : nullptr;
                const double* gout = gh_out.row_ptr(ti);
                double* dzr = dz.row_ptr(ti);
                for (std::size_t j = 0; j < hidden; ++j) {
                    double i = gates[j], f = gates[hidden + j], gg = gates[2 * hidden + j],
                           o = gates[3 * hidden + j];
                    double dh = gout[j] + dh_carry[j];
                    double dc = dc_carry[j] + dh * o * (1.0 - tc[j] * tc[j]);
                    dzr[j] = dc * gg * i * (1.0 - i);
                    dzr[hidden + j] = dc * (cp ? cp[j] : 0.0) * f * (1.0 - f);
                    dzr[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                    dzr[3 * hidden + j] = dh * tc[j] * o * (1.0 - o);
                    dc_carry[j] = dc * f;
                }
                if (ti > 0) {
                    Eigen::Map<const Eigen::RowVectorXd> dzrow(dzr,
                                                               static_cast<Eigen::Index>(4 * hidden));
                    Eigen::Map<Eigen::RowVectorXd> carry(dh_carry.data(),
                                                         static_cast<Eigen::Index>(hidden));
                    carry.noalias() = dzrow * wh.transpose();
                }
            }

            // previous hidden states: row 0 is zero, row t is h_{t-1}
            Tensor h_prev = Tensor::zeros({steps, hidden});
            for (std::size_t t = 1; t < steps; ++t)
                std::copy_n(hs.row_ptr(t - 1), hidden, h_prev.row_ptr(t));

            MapC wx(p.w.value.v.data(), static_cast<Eigen::Index>(in_dim),
                    static_cast<Eigen::Index>(4 * hidden));
            MapM gwx(p.w.grad.v.data(), static_cast<Eigen::Index>(in_dim),
                     static_cast<Eigen::Index>(4 * hidden));
            MapM gwh(p.w.grad.v.data() + in_dim * 4 * hidden, static_cast<Eigen::Index>(hidden),
                     static_cast<Eigen::Index>(4 * hidden));

            gwx.noalias() += cmat(xv).transpose() * cmat(dz);
            gwh.noalias() += cmat(h_prev).transpose() * cmat(dz);
            for (std::size_t t = 0; t < steps; ++t) {
                const double* dzr = dz.row_ptr(t);
                for (std::size_t j = 0; j < 4 * hidden; ++j) p.b.grad.v[j] += dzr[j];
            }
            Tensor& gx = g.grad_of(xs);
            mmat(gx).noalias() += cmat(dz) * wx.transpose();
            g.nodes_[xs].has_grad = true;
        };
    }
    return v;
}

Graph::Var Graph::softmax_xent_sum(Var logits, std::vector<std::int32_t> targets) {
    const Tensor& lv = nodes_[logits].value;
    require(lv.shape.size() == 2, "softmax_xent_sum: logits must be 2-d");
    require(targets.size() == lv.rows(), "softmax_xent_sum: one target per row");
    const std::size_t cols = lv.cols();

    auto lse = std::make_shared<std::vector<double>>(lv.rows());
    double total = 0.0;
    for (std::size_t r = 0; r < lv.rows(); ++r) {
        const double* row = lv.row_ptr(r);
        require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < cols,
                "softmax_xent_sum: target out of range");
        double m = row[0];
        for (std::size_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - m);
        (*lse)[r] = m + std::log(s);
        total += (*lse)[r] - row[static_cast<std::size_t>(targets[r])];
    }

    nodes_.push_back({Tensor::scalar(total), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, logits, lse, targets = std::move(targets)](Graph& g) {
            const double seed = g.nodes_[v].grad.v[0];
            const Tensor& lv = g.nodes_[logits].value;
            Tensor& gl = g.grad_of(logits);
            const std::size_t cols = lv.cols();
            for (std::size_t r = 0; r < lv.rows(); ++r) {
                const double* row = lv.row_ptr(r);
                double* grow = gl.row_ptr(r);
                const double z = (*lse)[r];
                for (std::size_t j = 0; j < cols; ++j) grow[j] += seed * std::exp(row[j] - z);
                grow[static_cast<std::size_t>(targets[r])] -= seed;
            }
            g.nodes_[logits].has_grad = true;
        };
    }
    return v;
}

Graph::Var Graph::add(Var a, Var b) {
    require(nodes_[a].value.same_shape(nodes_[b].value), "add: shape mismatch");
    Tensor out = nodes_[a].value;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += nodes_[b].value.v[i];
    nodes_.push_back({std::move(out), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, a, b](Graph& g) {
            const Tensor& go = g.nodes_[v].grad;
            g.accumulate(a, go.v.data(), go.v.size());
            g.accumulate(b, go.v.data(), go.v.size());
        };
    }
    return v;
}

Graph::Var Graph::sum(Var x) {
    double total = 0.0;
    for (double e : nodes_[x].value.v) total += e;
    nodes_.push_back({Tensor::scalar(total), {}, false, nullptr});
    Var v = nodes_.size() - 1;
    if (record_) {
        nodes_[v].back = [v, x](Graph& g) {
            const double seed = g.nodes_[v].grad.v[0];
            Tensor& gx = g.grad_of(x);
            for (double& e : gx.v) e += seed;
            g.nodes_[x].has_grad = true;
        };
    }
    return v;
}

void Graph::backward(Var root, double seed) {
    require(record_, "backward: graph was built without recording");
    require(nodes_[root].value.size() == 1, "backward: root must be scalar");
    grad_of(root).v[0] += seed;
    nodes_[root].has_grad = true;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.back) n.back(*this);
    }
}

double softmax_xent_value(std::span<const double> logits, std::size_t target) {
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double s = 0.0;
    for (double x : logits) s += std::exp(x - m);
    return m + std::log(s) - logits[target];
}

std::vector<double> softmax(std::span<const double> logits) {
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double s = 0.0;
    for (double x : logits) s += std::exp(x - m);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - m) / s;
    return out;
}

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->grad.fill(0.0);
}

double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double g : p->grad.v) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    double factor = max_norm / norm;
    for (Parameter* p : params)
        for (double& g : p->grad.v) g *= factor;
    return factor;
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
    for (Parameter* p : params) {
        for (double g : p->grad.v) {
            if (!std::isfinite(g))
                throw DivergenceError("adam: non-finite gradient in parameter '" + p->name + "'");
        }
        ++p->step_count;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
        for (std::size_t i = 0; i < p->value.v.size(); ++i) {
            const double g = p->grad.v[i];
            double& m = p->adam_m.v[i];
            double& v = p->adam_v.v[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            p->value.v[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        }
    }
}

FdReport finite_difference_check(std::span<Parameter* const> params,
                                 const std::function<double()>& forward,
                                 const std::function<double()>& forward_backward) {
    FdReport report;
    if (params.empty()) return report;

    zero_grads(params);
    forward_backward();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(p->grad);

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (std::size_t i = 0; i < p->value.v.size(); ++i) {
            const double old = p->value.v[i];
            const double h = 1e-5 * std::max(1.0, std::abs(old));
            p->value.v[i] = old + h;
            const double fp = forward();
            p->value.v[i] = old - h;
            const double fm = forward();
            p->value.v[i] = old;

            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi].v[i];
            // the 1e-5 floor keeps double-precision FD noise (~1e-10 absolute
            // at loss scale) from registering as relative error on near-zero
            // gradient entries
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5});
            ++report.checked;
            if (rel >= report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {p->name, i, a, numeric, rel};
            }
        }
    }
    return report;
}

}  // namespace hieremb
