#include "mpfn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace mpfn {

namespace {

void check_finite(const std::vector<double>& values, const char* op) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}

std::string dim_str(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }

[[noreturn]] void dim_error(const char* op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace

void apply_precision(std::vector<double>& values, Precision p) {
    if (p == Precision::f64) return;
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Tensor factories
// ---------------------------------------------------------------------------

static std::shared_ptr<detail::TensorData> make_data(int rows, int cols, bool requires_grad) {
    if (rows <= 0 || cols <= 0) {
        throw DimensionError("tensor: dimensions must be positive, got " + dim_str(rows, cols));
    }
    auto d = std::make_shared<detail::TensorData>();
    d->rows = rows;
    d->cols = cols;
    d->values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    d->requires_grad = requires_grad;
    return d;
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    return Tensor(make_data(rows, cols, requires_grad));
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
    auto d = make_data(rows, cols, requires_grad);
    std::fill(d->values.begin(), d->values.end(), value);
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full(1, 1, value, requires_grad);
}

Tensor Tensor::of(int rows, int cols, std::vector<double> values, bool requires_grad) {
    auto d = make_data(rows, cols, requires_grad);
    if (values.size() != d->values.size()) {
        throw DimensionError("tensor: " + std::to_string(values.size()) +
                             " values for shape " + dim_str(rows, cols));
    }
    d->values = std::move(values);
    return Tensor(std::move(d));
}

Tensor Tensor::uniform(int rows, int cols, Rng& rng, double lo, double hi, bool requires_grad) {
    auto d = make_data(rows, cols, requires_grad);
    for (double& v : d->values) v = mpfn::uniform(rng, lo, hi);
    return Tensor(std::move(d));
}

Tensor Tensor::xavier(int rows, int cols, Rng& rng, bool requires_grad) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    return uniform(rows, cols, rng, -bound, bound, requires_grad);
}

double Tensor::item() const {
    if (!is_scalar()) throw UsageError("item: tensor is " + shape_str() + ", not scalar");
    return d_->values[0];
}

Tensor Tensor::clone() const {
    auto d = std::make_shared<detail::TensorData>();
    d->rows = d_->rows;
    d->cols = d_->cols;
    d->values = d_->values;
    d->requires_grad = d_->requires_grad;
    return Tensor(std::move(d));
}

std::string Tensor::shape_str() const {
    if (!defined()) return "<null>";
    return dim_str(d_->rows, d_->cols);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::clear() {
    records_.clear();
    op_outputs_.clear();
}

Tensor Tape::make_output(int rows, int cols, bool needs_grad, const char*) {
    return Tensor(make_data(rows, cols, needs_grad && grad_enabled_));
}

void Tape::record(const char* op, const Tensor& out, std::function<void()> fn) {
    apply_precision(out.d_->values, precision_);
    check_finite(out.d_->values, op);
    if (grad_enabled_ && out.requires_grad()) {
        records_.push_back({op, std::move(fn)});
        op_outputs_.push_back(out.d_);
    }
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw UsageError("backward: loss must be scalar, got " + loss.shape_str());
    }
    // Intermediate grads are transient per pass; leaf grads persist and
    // therefore accumulate across calls.
    for (auto& out : op_outputs_) out->grad.clear();
    loss.d_->grad_buffer()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " * " +
                             b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_output(m, n, a.requires_grad() || b.requires_grad(), "matmul");
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (int i = 0; i < m; ++i) {
        double* orow = po + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = pa[static_cast<std::size_t>(i) * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    record("matmul", out, [a = a.d_, b = b.d_, o = out.d_, m, k, n] {
        if (o->grad.empty()) return;
        const double* g = o->grad.data();
        if (a->requires_grad) {
            double* ga = a->grad_buffer().data();
            const double* pb = b->values.data();
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    const double* brow = pb + static_cast<std::size_t>(l) * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[static_cast<std::size_t>(i) * k + l] += acc;
                }
        }
        if (b->requires_grad) {
            double* gb = b->grad_buffer().data();
            const double* pa = a->values.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * n;
                for (int l = 0; l < k; ++l) {
                    const double av = pa[static_cast<std::size_t>(i) * k + l];
                    if (av == 0.0) continue;
                    double* gbrow = gb + static_cast<std::size_t>(l) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
    return out;
}

Tensor Tape::transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    Tensor out = make_output(n, m, a.requires_grad(), "transpose");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    record("transpose", out, [a = a.d_, o = out.d_, m, n] {
        if (o->grad.empty() || !a->requires_grad) return;
        double* ga = a->grad_buffer().data();
        const double* g = o->grad.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
    return out;
}

// Shared body for add/sub/mul.  Scalar (1x1) operands broadcast on either
// side; any other shape mismatch is an error.
Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const bool as = a.is_scalar(), bs = b.is_scalar();
    if (!as && !bs && (a.rows() != b.rows() || a.cols() != b.cols())) dim_error("add", a, b);
    const Tensor& big = (as && !bs) ? b : a;
    Tensor out = make_output(big.rows(), big.cols(), a.requires_grad() || b.requires_grad(), "add");
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
        out.values()[i] = a.values()[as && n > 1 ? 0 : i] + b.values()[bs && n > 1 ? 0 : i];
    record("add", out, [a = a.d_, b = b.d_, o = out.d_] {
        if (o->grad.empty()) return;
        const auto& g = o->grad;
        if (a->requires_grad) {
            auto& ga = a->grad_buffer();
            if (ga.size() == g.size())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            else
                for (double v : g) ga[0] += v;
        }
        if (b->requires_grad) {
            auto& gb = b->grad_buffer();
            if (gb.size() == g.size())
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            else
                for (double v : g) gb[0] += v;
        }
    });
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    const bool as = a.is_scalar(), bs = b.is_scalar();
    if (!as && !bs && (a.rows() != b.rows() || a.cols() != b.cols())) dim_error("sub", a, b);
    const Tensor& big = (as && !bs) ? b : a;
    Tensor out = make_output(big.rows(), big.cols(), a.requires_grad() || b.requires_grad(), "sub");
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
        out.values()[i] = a.values()[as && n > 1 ? 0 : i] - b.values()[bs && n > 1 ? 0 : i];
    record("sub", out, [a = a.d_, b = b.d_, o = out.d_] {
        if (o->grad.empty()) return;
        const auto& g = o->grad;
        if (a->requires_grad) {
            auto& ga = a->grad_buffer();
            if (ga.size() == g.size())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            else
                for (double v : g) ga[0] += v;
        }
        if (b->requires_grad) {
            auto& gb = b->grad_buffer();
            if (gb.size() == g.size())
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            else
                for (double v : g) gb[0] -= v;
        }
    });
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    const bool as = a.is_scalar(), bs = b.is_scalar();
    if (!as && !bs && (a.rows() != b.rows() || a.cols() != b.cols())) dim_error("mul", a, b);
    const Tensor& big = (as && !bs) ? b : a;
    Tensor out = make_output(big.rows(), big.cols(), a.requires_grad() || b.requires_grad(), "mul");
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
        out.values()[i] = a.values()[as && n > 1 ? 0 : i] * b.values()[bs && n > 1 ? 0 : i];
    record("mul", out, [a = a.d_, b = b.d_, o = out.d_] {
        if (o->grad.empty()) return;
        const auto& g = o->grad;
        const bool as = a->size() == 1 && g.size() > 1;
        const bool bs = b->size() == 1 && g.size() > 1;
        if (a->requires_grad) {
            auto& ga = a->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[as ? 0 : i] += g[i] * b->values[bs ? 0 : i];
        }
        if (b->requires_grad) {
            auto& gb = b->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[bs ? 0 : i] += g[i] * a->values[as ? 0 : i];
        }
    });
    return out;
}

Tensor Tape::relu(const Tensor& a) {
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "relu");
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = std::max(0.0, a.values()[i]);
    record("relu", out, [a = a.d_, o = out.d_] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < o->grad.size(); ++i)
            if (a->values[i] > 0.0) ga[i] += o->grad[i];
    });
    return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "sigmoid");
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.values()[i];
        out.values()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                   : std::exp(x) / (1.0 + std::exp(x));
    }
    record("sigmoid", out, [a = a.d_, o = out.d_] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < o->grad.size(); ++i) {
            const double s = o->values[i];
            ga[i] += o->grad[i] * s * (1.0 - s);
        }
    });
    return out;
}

Tensor Tape::tanh(const Tensor& a) {
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "tanh");
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = std::tanh(a.values()[i]);
    record("tanh", out, [a = a.d_, o = out.d_] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < o->grad.size(); ++i) {
            const double t = o->values[i];
            ga[i] += o->grad[i] * (1.0 - t * t);
        }
    });
    return out;
}

Tensor Tape::log(const Tensor& a) {
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "log");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] <= 0.0) throw NumericError("log: non-positive input");
        out.values()[i] = std::log(a.values()[i]);
    }
    record("log", out, [a = a.d_, o = out.d_] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < o->grad.size(); ++i) ga[i] += o->grad[i] / a->values[i];
    });
    return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "scale");
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = c * a.values()[i];
    record("scale", out, [a = a.d_, o = out.d_, c] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < o->grad.size(); ++i) ga[i] += c * o->grad[i];
    });
    return out;
}

Tensor Tape::add_rowvec(const Tensor& a, const Tensor& v) {
    if (v.rows() != 1 || v.cols() != a.cols()) dim_error("add_rowvec", a, v);
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad() || v.requires_grad(),
                             "add_rowvec");
    const int n = a.rows(), d = a.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = a.at(i, j) + v.at(0, j);
    record("add_rowvec", out, [a = a.d_, v = v.d_, o = out.d_, n, d] {
        if (o->grad.empty()) return;
        const double* g = o->grad.data();
        if (a->requires_grad) {
            auto& ga = a->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (v->requires_grad) {
            auto& gv = v->grad_buffer();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gv[j] += g[static_cast<std::size_t>(i) * d + j];
        }
    });
    return out;
}

Tensor Tape::softmax(const Tensor& a, int axis) {
    if (axis != 0 && axis != 1) throw UsageError("softmax: axis must be 0 or 1");
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "softmax");
    const int m = a.rows(), n = a.cols();
    const int slices = axis == 1 ? m : n;
    const int len = axis == 1 ? n : m;
    auto idx = [axis, n](int s, int k) {
        return axis == 1 ? static_cast<std::size_t>(s) * n + k
                         : static_cast<std::size_t>(k) * n + s;
    };
    for (int s = 0; s < slices; ++s) {
        double mx = a.values()[idx(s, 0)];
        for (int k = 1; k < len; ++k) mx = std::max(mx, a.values()[idx(s, k)]);
        double z = 0.0;
        for (int k = 0; k < len; ++k) {
            const double e = std::exp(a.values()[idx(s, k)] - mx);
            out.values()[idx(s, k)] = e;
            z += e;
        }
        for (int k = 0; k < len; ++k) out.values()[idx(s, k)] /= z;
    }
    record("softmax", out, [a = a.d_, o = out.d_, slices, len, idx] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (int s = 0; s < slices; ++s) {
            double dot = 0.0;
            for (int k = 0; k < len; ++k) dot += o->grad[idx(s, k)] * o->values[idx(s, k)];
            for (int k = 0; k < len; ++k)
                ga[idx(s, k)] += o->values[idx(s, k)] * (o->grad[idx(s, k)] - dot);
        }
    });
    return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no parts");
    if (axis != 0 && axis != 1) throw UsageError("concat: axis must be 0 or 1");
    int rows = parts[0].rows(), cols = parts[0].cols();
    bool needs = parts[0].requires_grad();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        if (axis == 0) {
            if (parts[p].cols() != cols) dim_error("concat", parts[0], parts[p]);
            rows += parts[p].rows();
        } else {
            if (parts[p].rows() != rows) dim_error("concat", parts[0], parts[p]);
            cols += parts[p].cols();
        }
        needs = needs || parts[p].requires_grad();
    }
    Tensor out = make_output(rows, cols, needs, "concat");
    if (axis == 0) {
        int r0 = 0;
        for (const auto& p : parts) {
            std::copy(p.values().begin(), p.values().end(),
                      out.values().begin() + static_cast<std::size_t>(r0) * cols);
            r0 += p.rows();
        }
    } else {
        int c0 = 0;
        for (const auto& p : parts) {
            for (int i = 0; i < rows; ++i)
                std::copy(p.values().begin() + static_cast<std::size_t>(i) * p.cols(),
                          p.values().begin() + static_cast<std::size_t>(i + 1) * p.cols(),
                          out.values().begin() + static_cast<std::size_t>(i) * cols + c0);
            c0 += p.cols();
        }
    }
    std::vector<Tape::Data> datas;
    datas.reserve(parts.size());
    for (const auto& p : parts) datas.push_back(p.d_);
    record("concat", out, [datas = std::move(datas), o = out.d_, axis, rows, cols] {
        if (o->grad.empty()) return;
        const double* g = o->grad.data();
        int off = 0;
        for (const auto& p : datas) {
            if (p->requires_grad) {
                auto& gp = p->grad_buffer();
                if (axis == 0) {
                    for (std::size_t i = 0; i < gp.size(); ++i)
                        gp[i] += g[static_cast<std::size_t>(off) * cols + i];
                } else {
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < p->cols; ++j)
                            gp[static_cast<std::size_t>(i) * p->cols + j] +=
                                g[static_cast<std::size_t>(i) * cols + off + j];
                }
            }
            off += axis == 0 ? p->rows : p->cols;
        }
    });
    return out;
}

Tensor Tape::row(const Tensor& a, int i) {
    if (i < 0 || i >= a.rows()) throw UsageError("row: index out of range");
    Tensor out = make_output(1, a.cols(), a.requires_grad(), "row");
    std::copy(a.values().begin() + static_cast<std::size_t>(i) * a.cols(),
              a.values().begin() + static_cast<std::size_t>(i + 1) * a.cols(),
              out.values().begin());
    record("row", out, [a = a.d_, o = out.d_, i] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (int j = 0; j < o->cols; ++j) ga[static_cast<std::size_t>(i) * a->cols + j] += o->grad[j];
    });
    return out;
}

Tensor Tape::pick(const Tensor& a, int i, int j) {
    if (i < 0 || i >= a.rows() || j < 0 || j >= a.cols())
        throw UsageError("pick: index out of range");
    Tensor out = make_output(1, 1, a.requires_grad(), "pick");
    out.values()[0] = a.at(i, j);
    record("pick", out, [a = a.d_, o = out.d_, i, j] {
        if (o->grad.empty() || !a->requires_grad) return;
        a->grad_buffer()[static_cast<std::size_t>(i) * a->cols + j] += o->grad[0];
    });
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    Tensor out = make_output(1, 1, a.requires_grad(), "sum");
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    out.values()[0] = acc;
    record("sum", out, [a = a.d_, o = out.d_] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (double& g : ga) g += o->grad[0];
    });
    return out;
}

Tensor Tape::embed_rows(const Tensor& table, const std::vector<int>& ids) {
    if (ids.empty()) throw UsageError("embed_rows: empty id list");
    const int d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= table.rows())
            throw DataError("embed_rows: id " + std::to_string(id) + " out of range for table " +
                            table.shape_str());
    Tensor out = make_output(static_cast<int>(ids.size()), d, table.requires_grad(), "embed_rows");
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(table.values().begin() + static_cast<std::size_t>(ids[i]) * d,
                  table.values().begin() + static_cast<std::size_t>(ids[i] + 1) * d,
                  out.values().begin() + i * d);
    record("embed_rows", out, [t = table.d_, o = out.d_, ids, d] {
        if (o->grad.empty() || !t->requires_grad) return;
        auto& gt = t->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < d; ++j)
                gt[static_cast<std::size_t>(ids[i]) * d + j] += o->grad[i * d + j];
    });
    return out;
}

Tensor Tape::dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return a;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(a.size());
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (auto& m : *mask) m = dist(rng) < keep ? 1.0 / keep : 0.0;
    Tensor out = make_output(a.rows(), a.cols(), a.requires_grad(), "dropout");
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * (*mask)[i];
    record("dropout", out, [a = a.d_, o = out.d_, mask] {
        if (o->grad.empty() || !a->requires_grad) return;
        auto& ga = a->grad_buffer();
        for (std::size_t i = 0; i < o->grad.size(); ++i) ga[i] += o->grad[i] * (*mask)[i];
    });
    return out;
}

}  // namespace mpfn
