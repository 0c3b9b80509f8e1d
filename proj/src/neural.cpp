#include "kegnas/neural.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace kegnas::nn {

// ---------------------------------------------------------------------------
// ParamStore

ParamStore::Id ParamStore::add(const std::string& name, Matrix init) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
        throw std::invalid_argument("parameter names must be non-empty and whitespace-free");
    }
    Tensor t;
    t.name = name;
    t.grad = Matrix::Zero(init.rows(), init.cols());
    t.m1 = Matrix::Zero(init.rows(), init.cols());
    t.m2 = Matrix::Zero(init.rows(), init.cols());
    t.value = std::move(init);
    tensors_.push_back(std::move(t));
    const Id id = tensors_.size() - 1;
    index_[name] = id;
    return id;
}

ParamStore::Id ParamStore::id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
}

std::size_t ParamStore::num_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
}

void ParamStore::zero_grad() {
    for (auto& t : tensors_) t.grad.setZero(t.value.rows(), t.value.cols());
}

bool ParamStore::grads_finite() const {
    for (const auto& t : tensors_) {
        if (!t.grad.allFinite()) return false;
    }
    return true;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("failed to format double");
    return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || s.empty()) throw std::invalid_argument("malformed number '" + s + "'");
    return v;
}

void ParamStore::save(std::ostream& os) const {
    os << "kegnas-params 1\n";
    for (const auto& [k, v] : meta_) os << "meta " << k << ' ' << v << '\n';
    for (const auto& t : tensors_) {
        os << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
                if (c) os << ' ';
                os << format_double(t.value(r, c));
            }
            os << '\n';
        }
    }
    os << "end\n";
}

void ParamStore::save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    save(os);
    if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

ParamStore ParamStore::load(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "kegnas-params 1") {
        throw std::runtime_error("not a kegnas checkpoint (bad header)");
    }
    ParamStore store;
    bool ended = false;
    while (std::getline(is, line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            store.meta_[key] = value;
        } else if (kind == "tensor") {
            std::string name;
            long rows = -1, cols = -1;
            ls >> name >> rows >> cols;
            if (!ls || rows < 0 || cols < 0) throw std::runtime_error("malformed tensor header: " + line);
            Matrix m(rows, cols);
            for (long r = 0; r < rows; ++r) {
                if (!std::getline(is, line)) throw std::runtime_error("truncated tensor " + name);
                std::istringstream vs(line);
                for (long c = 0; c < cols; ++c) {
                    std::string tok;
                    if (!(vs >> tok)) throw std::runtime_error("truncated row in tensor " + name);
                    m(r, c) = parse_double(tok);
                }
            }
            store.add(name, std::move(m));
        } else {
            throw std::runtime_error("unexpected checkpoint line: " + line);
        }
    }
    if (!ended) throw std::runtime_error("checkpoint missing end marker");
    return store;
}

ParamStore ParamStore::load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    return load(is);
}

UpdateStatus adam_update(ParamStore& store, const AdamConfig& cfg) {
    if (!store.grads_finite()) return UpdateStatus::rejected_nonfinite;
    ++store.step_;
    const double t = static_cast<double>(store.step_);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& p : store.tensors_) {
        p.m1 = cfg.beta1 * p.m1 + (1.0 - cfg.beta1) * p.grad;
        p.m2 = cfg.beta2 * p.m2 + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
        p.value.array() -= cfg.lr * (p.m1.array() / c1) / ((p.m2.array() / c2).sqrt() + cfg.eps);
    }
    return UpdateStatus::applied;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix v) { return push(std::move(v), false, {}); }

Var Tape::param(ParamStore& store, ParamStore::Id id) {
    const Matrix* ref = &store.value(id);
    if (auto it = param_nodes_.find(ref); it != param_nodes_.end()) return Var{it->second};
    Node n;
    n.ref = ref;
    n.store = &store;
    n.pid = id;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    param_nodes_[ref] = nodes_.size() - 1;
    return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.value;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::run_backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, n.grad);
        if (n.store) {
            Matrix& sg = n.store->grad(n.pid);
            if (sg.rows() != n.grad.rows() || sg.cols() != n.grad.cols()) sg.setZero(n.grad.rows(), n.grad.cols());
            sg += n.grad;
        }
    }
}

void Tape::backward(Var root) {
    if (value(root).size() != 1) throw std::invalid_argument("backward(root) requires a 1x1 root");
    backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
    const Matrix& v = value(out);
    if (seed.rows() != v.rows() || seed.cols() != v.cols()) throw std::invalid_argument("seed shape mismatch");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    accumulate(out.id, seed);
    run_backward();
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + std::to_string(A.rows()) + "x" +
                                    std::to_string(A.cols()) + " * " + std::to_string(B.rows()) + "x" +
                                    std::to_string(B.cols()));
    }
    Matrix out = A * B;
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
        if (t.needs(a)) t.accumulate(a.id, g * t.value(b).transpose());
        if (t.needs(b)) t.accumulate(b.id, t.value(a).transpose() * g);
    });
}

Var Tape::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    return push(value(a) + value(b), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a.id, g);
        t.accumulate(b.id, g);
    });
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    return push(value(a) - value(b), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
        t.accumulate(a.id, g);
        if (t.needs(b)) t.accumulate(b.id, -g);
    });
}

Var Tape::add_row(Var a, Var row) {
    const Matrix& A = value(a);
    const Matrix& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw std::invalid_argument("add_row: shape mismatch");
    Matrix out = A.rowwise() + R.row(0);
    return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, const Matrix& g) {
        t.accumulate(a.id, g);
        if (t.needs(row)) t.accumulate(row.id, g.colwise().sum());
    });
}

Var Tape::hadamard(Var a, Var b) {
    require_same_shape(value(a), value(b), "hadamard");
    return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
        if (t.needs(a)) t.accumulate(a.id, g.cwiseProduct(t.value(b)));
        if (t.needs(b)) t.accumulate(b.id, g.cwiseProduct(t.value(a)));
    });
}

Var Tape::scale(Var a, double s) {
    return push(value(a) * s, needs(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a.id, g * s); });
}

Var Tape::add_scalar(Var a, double s) {
    Matrix out = value(a).array() + s;
    return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) { t.accumulate(a.id, g); });
}

Var Tape::one_minus(Var a) {
    Matrix out = 1.0 - value(a).array();
    return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) { t.accumulate(a.id, -g); });
}

Var Tape::tanh(Var a) {
    const std::size_t self = nodes_.size();
    Matrix out = value(a).array().tanh();
    return push(std::move(out), needs(a), [a, self](Tape& t, const Matrix& g) {
        const Matrix& y = t.nodes_[self].value;
        t.accumulate(a.id, (g.array() * (1.0 - y.array().square())).matrix());
    });
}

Var Tape::sigmoid(Var a) {
    const std::size_t self = nodes_.size();
    Matrix out = (1.0 + (-value(a).array()).exp()).inverse();
    return push(std::move(out), needs(a), [a, self](Tape& t, const Matrix& g) {
        const Matrix& y = t.nodes_[self].value;
        t.accumulate(a.id, (g.array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var Tape::relu(Var a) {
    Matrix out = value(a).cwiseMax(0.0);
    return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
        t.accumulate(a.id, (g.array() * (t.value(a).array() > 0.0).cast<double>()).matrix());
    });
}

Var Tape::exp(Var a) {
    const std::size_t self = nodes_.size();
    Matrix out = value(a).array().exp();
    return push(std::move(out), needs(a), [a, self](Tape& t, const Matrix& g) {
        t.accumulate(a.id, g.cwiseProduct(t.nodes_[self].value));
    });
}

Var Tape::square(Var a) {
    Matrix out = value(a).array().square();
    return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
        t.accumulate(a.id, 2.0 * g.cwiseProduct(t.value(a)));
    });
}

Var Tape::log_sigmoid(Var a) {
    const Matrix& x = value(a);
    Matrix out = x.array().min(0.0) - (-x.array().abs()).exp().log1p();
    return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
        const auto sig_neg = (1.0 + t.value(a).array().exp()).inverse();
        t.accumulate(a.id, (g.array() * sig_neg).matrix());
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Matrix out(A.rows(), A.cols() + B.cols());
    out << A, B;
    const Eigen::Index ca = A.cols();
    const Eigen::Index cb = B.cols();
    return push(std::move(out), needs(a) || needs(b), [a, b, ca, cb](Tape& t, const Matrix& g) {
        if (t.needs(a)) t.accumulate(a.id, g.leftCols(ca));
        if (t.needs(b)) t.accumulate(b.id, g.rightCols(cb));
    });
}

Var Tape::log_softmax_rows(Var a) {
    const Matrix& x = value(a);
    const Eigen::VectorXd mx = x.rowwise().maxCoeff();
    Matrix shifted = x.colwise() - mx;
    const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
    Matrix out = shifted.colwise() - lse;
    const std::size_t self = nodes_.size();
    return push(std::move(out), needs(a), [a, self](Tape& t, const Matrix& g) {
        const Matrix& y = t.nodes_[self].value;
        const Eigen::VectorXd gs = g.rowwise().sum();
        Matrix dx = g - (y.array().exp().colwise() * gs.array()).matrix();
        t.accumulate(a.id, dx);
    });
}

Var Tape::pick(Var a, std::vector<int> cols) {
    const Matrix& x = value(a);
    if (static_cast<Eigen::Index>(cols.size()) != x.rows()) throw std::invalid_argument("pick: size mismatch");
    Matrix out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (cols[r] < 0 || cols[r] >= x.cols()) throw std::out_of_range("pick: column out of range");
        out(r, 0) = x(r, cols[r]);
    }
    const Eigen::Index nc = x.cols();
    return push(std::move(out), needs(a), [a, cols = std::move(cols), nc](Tape& t, const Matrix& g) {
        Matrix dx = Matrix::Zero(g.rows(), nc);
        for (Eigen::Index r = 0; r < g.rows(); ++r) dx(r, cols[r]) = g(r, 0);
        t.accumulate(a.id, dx);
    });
}

Var Tape::select_rows(std::vector<Var> sources, std::vector<int> which) {
    if (sources.empty()) throw std::invalid_argument("select_rows: no sources");
    const Matrix& first = value(sources.front());
    for (Var s : sources) require_same_shape(first, value(s), "select_rows");
    if (static_cast<Eigen::Index>(which.size()) != first.rows()) throw std::invalid_argument("select_rows: size mismatch");
    Matrix out(first.rows(), first.cols());
    bool any = false;
    for (Eigen::Index r = 0; r < first.rows(); ++r) {
        if (which[r] < 0 || which[r] >= static_cast<int>(sources.size())) throw std::out_of_range("select_rows: index");
        out.row(r) = value(sources[which[r]]).row(r);
    }
    for (Var s : sources) any = any || needs(s);
    return push(std::move(out), any, [sources = std::move(sources), which = std::move(which)](Tape& t, const Matrix& g) {
        for (std::size_t k = 0; k < sources.size(); ++k) {
            if (!t.needs(sources[k])) continue;
            Matrix dx = Matrix::Zero(g.rows(), g.cols());
            bool touched = false;
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                if (which[r] == static_cast<int>(k)) {
                    dx.row(r) = g.row(r);
                    touched = true;
                }
            }
            if (touched) t.accumulate(sources[k].id, dx);
        }
    });
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
    const Matrix& x = value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= x.rows()) throw std::out_of_range("gather_rows: index");
        out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    }
    const Eigen::Index n = x.rows();
    return push(std::move(out), needs(a), [a, rows = std::move(rows), n](Tape& t, const Matrix& g) {
        Matrix dx = Matrix::Zero(n, g.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(a.id, dx);
    });
}

Var Tape::scale_rows(Var a, Vector w) {
    const Matrix& x = value(a);
    if (w.size() != x.rows()) throw std::invalid_argument("scale_rows: size mismatch");
    Matrix out = w.asDiagonal() * x;
    return push(std::move(out), needs(a), [a, w = std::move(w)](Tape& t, const Matrix& g) {
        t.accumulate(a.id, w.asDiagonal() * g);
    });
}

Var Tape::sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    const Eigen::Index r = value(a).rows(), c = value(a).cols();
    return push(std::move(out), needs(a), [a, r, c](Tape& t, const Matrix& g) {
        t.accumulate(a.id, Matrix::Constant(r, c, g(0, 0)));
    });
}

Var Tape::mean(Var a) {
    const double n = static_cast<double>(value(a).size());
    return scale(sum(a), 1.0 / n);
}

Var Tape::row_sum(Var a) {
    Matrix out = value(a).rowwise().sum();
    const Eigen::Index c = value(a).cols();
    return push(std::move(out), needs(a), [a, c](Tape& t, const Matrix& g) {
        t.accumulate(a.id, g.replicate(1, c));
    });
}

Var Tape::sparse_left(std::shared_ptr<const SparseMatrix> s, Var a) {
    if (s->cols() != value(a).rows()) throw std::invalid_argument("sparse_left: shape mismatch");
    Matrix out = (*s) * value(a);
    return push(std::move(out), needs(a), [a, s](Tape& t, const Matrix& g) {
        t.accumulate(a.id, s->transpose() * g);
    });
}

// ---------------------------------------------------------------------------
// Layers

Matrix glorot(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
    return m;
}

Dense Dense::create(ParamStore& store, const std::string& prefix, int in, int out, Activation act, Rng& rng) {
    Dense d;
    d.in = in;
    d.out = out;
    d.act = act;
    d.w = store.add(prefix + ".w", glorot(in, out, rng));
    d.b = store.add(prefix + ".b", Matrix::Zero(1, out));
    return d;
}

Dense Dense::bind(const ParamStore& store, const std::string& prefix, Activation act) {
    Dense d;
    d.w = store.id(prefix + ".w");
    d.b = store.id(prefix + ".b");
    d.in = static_cast<int>(store.value(d.w).rows());
    d.out = static_cast<int>(store.value(d.w).cols());
    d.act = act;
    if (store.value(d.b).rows() != 1 || store.value(d.b).cols() != d.out) {
        throw std::runtime_error("bias shape mismatch for " + prefix);
    }
    return d;
}

Var Dense::operator()(Tape& tape, ParamStore& store, Var x) const {
    if (tape.value(x).cols() != in) {
        throw std::invalid_argument("dense: input has " + std::to_string(tape.value(x).cols()) +
                                    " columns, layer expects " + std::to_string(in));
    }
    Var y = tape.add_row(tape.matmul(x, tape.param(store, w)), tape.param(store, b));
    switch (act) {
        case Activation::tanh: return tape.tanh(y);
        case Activation::sigmoid: return tape.sigmoid(y);
        case Activation::relu: return tape.relu(y);
        case Activation::none: break;
    }
    return y;
}

GruCell GruCell::create(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng) {
    GruCell c;
    c.hidden = hidden;
    c.input_r = Dense::create(store, prefix + ".ir", in, hidden, Activation::none, rng);
    c.input_z = Dense::create(store, prefix + ".iz", in, hidden, Activation::none, rng);
    c.input_n = Dense::create(store, prefix + ".in", in, hidden, Activation::none, rng);
    c.hidden_r = Dense::create(store, prefix + ".hr", hidden, hidden, Activation::none, rng);
    c.hidden_z = Dense::create(store, prefix + ".hz", hidden, hidden, Activation::none, rng);
    c.hidden_n = Dense::create(store, prefix + ".hn", hidden, hidden, Activation::none, rng);
    return c;
}

GruCell GruCell::bind(const ParamStore& store, const std::string& prefix) {
    GruCell c;
    c.input_r = Dense::bind(store, prefix + ".ir", Activation::none);
    c.input_z = Dense::bind(store, prefix + ".iz", Activation::none);
    c.input_n = Dense::bind(store, prefix + ".in", Activation::none);
    c.hidden_r = Dense::bind(store, prefix + ".hr", Activation::none);
    c.hidden_z = Dense::bind(store, prefix + ".hz", Activation::none);
    c.hidden_n = Dense::bind(store, prefix + ".hn", Activation::none);
    c.hidden = c.hidden_r.out;
    return c;
}

Var GruCell::step(Tape& tape, ParamStore& store, Var x, Var h) const {
    if (tape.value(h).cols() != hidden) throw std::invalid_argument("gru: hidden size mismatch");
    Var r = tape.sigmoid(tape.add(input_r(tape, store, x), hidden_r(tape, store, h)));
    Var z = tape.sigmoid(tape.add(input_z(tape, store, x), hidden_z(tape, store, h)));
    Var n = tape.tanh(tape.add(input_n(tape, store, x), tape.hadamard(r, hidden_n(tape, store, h))));
    // h' = (1 - z) * n + z * h
    return tape.add(tape.hadamard(tape.one_minus(z), n), tape.hadamard(z, h));
}

}  // namespace kegnas::nn
