#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mpfn/error.hpp"
#include "mpfn/rng.hpp"

namespace mpfn {

// Stored value precision. Math always runs in double; in f32 mode every op
// output and parameter is rounded to the nearest float after it is produced,
// so stored values carry single-precision resolution while the code path
// stays single. Gradient checking requires f64.
enum class Precision { f64, f32 };

namespace detail {

struct TensorData {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::size_t size() const { return values.size(); }

    // Lazily allocated, zero-filled gradient accumulator.
    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

// A dense matrix participating in a differentiation tape.  Rank is always 2:
// scalars are 1x1, row vectors 1xd.  Handles share storage; copying a Tensor
// copies the handle, not the data.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor of(int rows, int cols, std::vector<double> values, bool requires_grad = false);
    static Tensor uniform(int rows, int cols, Rng& rng, double lo, double hi,
                          bool requires_grad = false);
    // Xavier-uniform: U(+-sqrt(6/(fan_in+fan_out))) with fan_in=rows, fan_out=cols.
    static Tensor xavier(int rows, int cols, Rng& rng, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    int rows() const { return d_->rows; }
    int cols() const { return d_->cols; }
    std::size_t size() const { return d_->values.size(); }
    bool is_scalar() const { return size() == 1; }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }

    double& at(int i, int j) { return d_->values[static_cast<std::size_t>(i) * d_->cols + j]; }
    double at(int i, int j) const { return d_->values[static_cast<std::size_t>(i) * d_->cols + j]; }
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    // Gradient accumulated by Tape::backward; empty vector if none yet.
    const std::vector<double>& grad() const { return d_->grad; }
    // Mutable, zero-initialized on first access (used by gradient merging).
    std::vector<double>& grad_buffer() { return d_->grad_buffer(); }
    double grad_at(int i, int j) const {
        return d_->grad.empty() ? 0.0 : d_->grad[static_cast<std::size_t>(i) * d_->cols + j];
    }
    void zero_grad() { d_->grad.clear(); }

    // Deep copy (values only; gradient starts empty).
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    std::string shape_str() const;

    std::shared_ptr<detail::TensorData> data_ptr() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<detail::TensorData> d_;

    friend class Tape;
};

// Records executed ops in order so that reverse replay visits each exactly
// once.  A tape and its tensors are confined to one worker thread; parallel
// workers each own a tape.
class Tape {
public:
    explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}

    Precision precision() const { return precision_; }

    // When disabled, ops still compute values but record nothing and outputs
    // never require grad (evaluation mode).
    void set_grad_enabled(bool v) { grad_enabled_ = v; }
    bool grad_enabled() const { return grad_enabled_; }

    std::size_t op_count() const { return records_.size(); }

    // Drops the recorded graph; leaf tensors and their gradients are untouched.
    void clear();

    // --- forward ops -----------------------------------------------------
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);

    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor relu(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor tanh(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor scale(const Tensor& a, double c);
    Tensor neg(const Tensor& a) { return scale(a, -1.0); }

    // Adds a 1xd row vector to every row of an nxd matrix (explicit, named
    // alignment; there is no implicit broadcasting beyond scalars).
    Tensor add_rowvec(const Tensor& a, const Tensor& v);

    // axis=1: normalize each row; axis=0: normalize each column.
    // Max-subtracted for stability.
    Tensor softmax(const Tensor& a, int axis);

    // axis=0 stacks rows, axis=1 concatenates columns.
    Tensor concat(const std::vector<Tensor>& parts, int axis);

    Tensor row(const Tensor& a, int i);
    Tensor pick(const Tensor& a, int i, int j);
    Tensor sum(const Tensor& a);

    // Gathers table rows by id; backward scatters into the table when it is
    // trainable (frozen tables receive no gradient).
    Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

    // Inverted dropout: kept entries scaled by 1/(1-rate) so evaluation is a
    // no-op.  rate==0 returns the input unchanged.
    Tensor dropout(const Tensor& a, double rate, Rng& rng);

    // --- backward ---------------------------------------------------------
    // loss must be scalar.  Repeated calls without zeroing leaf grads
    // accumulate into them.
    void backward(const Tensor& loss);

private:
    using Data = std::shared_ptr<detail::TensorData>;

    struct OpRecord {
        std::string name;
        std::function<void()> backward;
    };

    Tensor make_output(int rows, int cols, bool needs_grad, const char* op);
    void record(const char* op, const Tensor& out, std::function<void()> fn);
    bool track(const Tensor& t) const { return grad_enabled_ && t.requires_grad(); }

    Precision precision_ = Precision::f64;
    bool grad_enabled_ = true;
    std::vector<OpRecord> records_;
    std::vector<Data> op_outputs_;
};

// Rounds every value to the nearest float; identity in f64 mode.
void apply_precision(std::vector<double>& values, Precision p);

}  // namespace mpfn
