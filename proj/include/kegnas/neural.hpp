#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kegnas/rng.hpp"

namespace kegnas::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class UpdateStatus { applied, rejected_nonfinite };

class ParamStore;

/// One bias-corrected Adam step over every tensor. A non-finite gradient
/// anywhere rejects the whole batch and leaves the store untouched.
UpdateStatus adam_update(ParamStore& store, const AdamConfig& cfg);

/// Named parameter tensors with gradient and Adam moment buffers.
class ParamStore {
public:
    using Id = std::size_t;

    Id add(const std::string& name, Matrix init);
    Id id(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.contains(name); }

    Matrix& value(Id id) { return tensors_[id].value; }
    const Matrix& value(Id id) const { return tensors_[id].value; }
    Matrix& grad(Id id) { return tensors_[id].grad; }
    const Matrix& grad(Id id) const { return tensors_[id].grad; }
    const std::string& name(Id id) const { return tensors_[id].name; }

    std::size_t size() const { return tensors_.size(); }
    std::size_t num_scalars() const;
    std::size_t step() const { return step_; }

    void zero_grad();
    bool grads_finite() const;

    std::map<std::string, std::string>& meta() { return meta_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }

    /// Text checkpoint: versioned header, `meta` lines, then one `tensor
    /// name rows cols` line per tensor followed by its row-major values.
    void save(std::ostream& os) const;
    void save_file(const std::string& path) const;
    static ParamStore load(std::istream& is);
    static ParamStore load_file(const std::string& path);

private:
    friend UpdateStatus adam_update(ParamStore&, const AdamConfig&);

    struct Tensor {
        std::string name;
        Matrix value, grad, m1, m2;
    };
    std::vector<Tensor> tensors_;
    std::map<std::string, Id> index_;
    std::map<std::string, std::string> meta_;
    std::size_t step_ = 0;
};

struct Var {
    std::size_t id;
};

/// Define-by-run reverse-mode tape over matrices (rows are batch items).
class Tape {
public:
    Var constant(Matrix v);
    /// Leaf bound to a store tensor; repeated calls return the same node.
    Var param(ParamStore& store, ParamStore::Id id);

    const Matrix& value(Var v) const;
    /// Gradient after backward(); zero-sized if no gradient reached the node.
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and accumulates parameter
    /// gradients into their stores.
    void backward(Var root);
    void backward(Var out, const Matrix& seed);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_row(Var a, Var row);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var one_minus(Var a);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var relu(Var a);
    Var exp(Var a);
    Var square(Var a);
    Var log_sigmoid(Var a);
    Var concat_cols(Var a, Var b);
    Var log_softmax_rows(Var a);
    /// Column `cols[r]` of row r, as an n x 1 column.
    Var pick(Var a, std::vector<int> cols);
    /// Row r is row r of sources[which[r]].
    Var select_rows(std::vector<Var> sources, std::vector<int> which);
    Var gather_rows(Var a, std::vector<int> rows);
    /// Row r multiplied by the constant w[r].
    Var scale_rows(Var a, Vector w);
    Var sum(Var a);
    Var mean(Var a);
    Var row_sum(Var a);
    /// S * a for a constant sparse S.
    Var sparse_left(std::shared_ptr<const SparseMatrix> s, Var a);

private:
    using Backward = std::function<void(Tape&, const Matrix&)>;

    struct Node {
        Matrix value;
        Matrix grad;
        const Matrix* ref = nullptr;
        ParamStore* store = nullptr;
        ParamStore::Id pid = 0;
        bool needs_grad = false;
        Backward backward;
    };

    Var push(Matrix value, bool needs_grad, Backward backward);
    void accumulate(std::size_t id, const Matrix& g);
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    void run_backward();

    std::vector<Node> nodes_;
    std::unordered_map<const Matrix*, std::size_t> param_nodes_;
};

enum class Activation { none, tanh, sigmoid, relu };

/// y = act(x W + b)
struct Dense {
    ParamStore::Id w = 0;
    ParamStore::Id b = 0;
    int in = 0;
    int out = 0;
    Activation act = Activation::none;

    static Dense create(ParamStore& store, const std::string& prefix, int in, int out, Activation act, Rng& rng);
    /// Re-binds to tensors already present in `store` (after loading).
    static Dense bind(const ParamStore& store, const std::string& prefix, Activation act);
    Var operator()(Tape& tape, ParamStore& store, Var x) const;
};

/// Gated recurrent unit, update/reset-gate form.
struct GruCell {
    Dense input_r, input_z, input_n;
    Dense hidden_r, hidden_z, hidden_n;
    int hidden = 0;

    static GruCell create(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng);
    static GruCell bind(const ParamStore& store, const std::string& prefix);
    Var step(Tape& tape, ParamStore& store, Var x, Var h) const;
};

/// Glorot-uniform weights.
Matrix glorot(int rows, int cols, Rng& rng);

std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace kegnas::nn
