#include "kegnas/dmogp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace kegnas {

using nn::Activation;
using nn::Dense;
using nn::Matrix;
using nn::Tape;
using nn::Var;

// ---------------------------------------------------------------------------
// Target transform

TargetTransform TargetTransform::fit(std::span<const GpSample> data, std::size_t num_tasks) {
    TargetTransform t;
    t.task_mean.assign(num_tasks, 0.0);
    t.task_std.assign(num_tasks, 1.0);
    std::vector<std::vector<double>> logs(num_tasks);
    for (const auto& d : data) {
        if (d.task >= num_tasks) throw std::invalid_argument("sample references an unknown task");
        if (d.obj.size() != kNumObjectives) throw std::invalid_argument("surrogate expects two objectives");
        if (!(d.obj.params() > 0.0)) throw std::invalid_argument("parameter count must be positive");
        logs[d.task].push_back(std::log(d.obj.params()));
    }
    double mean_sum = 0.0, std_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < num_tasks; ++k) {
        if (logs[k].empty()) continue;
        const double n = static_cast<double>(logs[k].size());
        const double mean = std::accumulate(logs[k].begin(), logs[k].end(), 0.0) / n;
        double var = 0.0;
        for (double v : logs[k]) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / n);
        if (sd < 1e-12) sd = 1.0;
        t.task_mean[k] = mean;
        t.task_std[k] = sd;
        mean_sum += mean;
        std_sum += sd;
        ++present;
    }
    if (present > 0) {
        t.pooled_mean = mean_sum / static_cast<double>(present);
        t.pooled_std = std_sum / static_cast<double>(present);
    }
    return t;
}

Eigen::RowVectorXd TargetTransform::to_target(const ObjectiveVector& obj, std::size_t task) const {
    const double mean = task < task_mean.size() ? task_mean[task] : pooled_mean;
    const double sd = task < task_std.size() ? task_std[task] : pooled_std;
    Eigen::RowVectorXd y(kNumObjectives);
    y << obj.err(), (std::log(obj.params()) - mean) / sd;
    return y;
}

ObjectiveVector TargetTransform::to_objective(const Eigen::VectorXd& target) const {
    return ObjectiveVector{target[0], std::exp(target[1] * pooled_std + pooled_mean)};
}

// ---------------------------------------------------------------------------
// Construction and checkpoints

Dmogp::Dmogp(const SearchSpaceSpec& spec, const DmogpConfig& cfg, std::uint64_t seed) : spec_(spec), cfg_(cfg) {
    spec_.check();
    if (cfg.hidden <= 0 || cfg.arch_dim <= 0 || cfg.combined_dim <= 0 || cfg.feature_dim <= 0 ||
        cfg.coregion_rank <= 0) {
        throw std::invalid_argument("surrogate sizes must be positive");
    }
    Rng rng(seed);
    const int types = spec_.num_ops + 2;
    const int h = cfg.hidden;
    nn::GruCell::create(store_, "gp.fwd", types, h, rng);
    nn::GruCell::create(store_, "gp.rev", types, h, rng);
    Dense::create(store_, "gp.fwd_gate", h, h, Activation::sigmoid, rng);
    Dense::create(store_, "gp.fwd_map", h, h, Activation::none, rng);
    Dense::create(store_, "gp.rev_gate", h, h, Activation::sigmoid, rng);
    Dense::create(store_, "gp.rev_map", h, h, Activation::none, rng);
    Dense::create(store_, "gp.readout", 2 * h, cfg.arch_dim, Activation::none, rng);
    Dense::create(store_, "gp.combiner", cfg.arch_dim + cfg.feature_dim, cfg.combined_dim, Activation::tanh, rng);

    store_.add("gp.log_amp", Matrix::Zero(1, 1));
    store_.add("gp.log_ls", Matrix::Constant(1, 1, std::log(0.5 * std::sqrt(static_cast<double>(cfg.combined_dim)))));
    Matrix l(kNumObjectives, cfg.coregion_rank);
    for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = 0.3 * rng.normal();
    store_.add("gp.L", l);
    store_.add("gp.log_kappa", Matrix::Zero(1, kNumObjectives));
    store_.add("gp.log_noise", Matrix::Constant(1, kNumObjectives, std::log(1e-2)));

    auto& meta = store_.meta();
    meta["kind"] = "dmogp";
    meta["num_ops"] = std::to_string(spec_.num_ops);
    meta["feature_dim"] = std::to_string(cfg.feature_dim);
    bind();
}

Dmogp::Dmogp(const SearchSpaceSpec& spec, nn::ParamStore store) : spec_(spec), store_(std::move(store)) {
    spec_.check();
    const auto& meta = store_.meta();
    auto it = meta.find("kind");
    if (it == meta.end() || it->second != "dmogp") throw std::runtime_error("checkpoint is not a surrogate");
    it = meta.find("num_ops");
    if (it == meta.end() || std::stoi(it->second) != spec_.num_ops) {
        throw std::runtime_error("surrogate checkpoint was built for a different number of operations");
    }
    bind();
}

void Dmogp::bind() {
    fwd_ = nn::GruCell::bind(store_, "gp.fwd");
    rev_ = nn::GruCell::bind(store_, "gp.rev");
    fwd_gate_ = Dense::bind(store_, "gp.fwd_gate", Activation::sigmoid);
    fwd_map_ = Dense::bind(store_, "gp.fwd_map", Activation::none);
    rev_gate_ = Dense::bind(store_, "gp.rev_gate", Activation::sigmoid);
    rev_map_ = Dense::bind(store_, "gp.rev_map", Activation::none);
    readout_ = Dense::bind(store_, "gp.readout", Activation::none);
    combiner_ = Dense::bind(store_, "gp.combiner", Activation::tanh);
    log_amp_ = store_.id("gp.log_amp");
    log_ls_ = store_.id("gp.log_ls");
    chol_ = store_.id("gp.L");
    log_kappa_ = store_.id("gp.log_kappa");
    log_noise_ = store_.id("gp.log_noise");
    cfg_.hidden = fwd_.hidden;
    cfg_.arch_dim = readout_.out;
    cfg_.combined_dim = combiner_.out;
    cfg_.feature_dim = combiner_.in - readout_.out;
    cfg_.coregion_rank = static_cast<int>(store_.value(chol_).cols());
    if (fwd_.input_r.in != spec_.num_ops + 2 || store_.value(chol_).rows() != kNumObjectives) {
        throw std::runtime_error("surrogate tensors disagree with the search space");
    }
}

void Dmogp::save(const std::string& path) const {
    nn::ParamStore out = store_;
    const auto k = static_cast<Eigen::Index>(transform_.task_mean.size());
    Matrix mean(1, k), sd(1, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        mean(0, i) = transform_.task_mean[static_cast<std::size_t>(i)];
        sd(0, i) = transform_.task_std[static_cast<std::size_t>(i)];
    }
    out.add("norm.task_mean", mean);
    out.add("norm.task_std", sd);
    Matrix pooled(1, 2);
    pooled << transform_.pooled_mean, transform_.pooled_std;
    out.add("norm.pooled", pooled);
    if (conditioned()) {
        Matrix enc(static_cast<Eigen::Index>(cond_encs_.size()), kEncodingLength);
        for (std::size_t r = 0; r < cond_encs_.size(); ++r)
            for (int c = 0; c < kEncodingLength; ++c) enc(static_cast<Eigen::Index>(r), c) = cond_encs_[r].slot(c);
        out.add("cond.enc", enc);
        out.add("cond.s", cond_s_);
        out.add("cond.y", cond_y_);
    }
    out.save_file(path);
}

Dmogp Dmogp::load(const std::string& path, const SearchSpaceSpec& spec) {
    const nn::ParamStore full = nn::ParamStore::load_file(path);
    nn::ParamStore params;
    params.meta() = full.meta();
    for (std::size_t i = 0; i < full.size(); ++i) {
        const auto& name = full.name(i);
        if (name.starts_with("norm.") || name.starts_with("cond.")) continue;
        params.add(name, full.value(i));
    }
    Dmogp gp(spec, std::move(params));
    if (full.contains("norm.pooled")) {
        TargetTransform t;
        const Matrix& mean = full.value(full.id("norm.task_mean"));
        const Matrix& sd = full.value(full.id("norm.task_std"));
        t.task_mean.assign(mean.data(), mean.data() + mean.size());
        t.task_std.assign(sd.data(), sd.data() + sd.size());
        const Matrix& pooled = full.value(full.id("norm.pooled"));
        t.pooled_mean = pooled(0, 0);
        t.pooled_std = pooled(0, 1);
        gp.transform_ = std::move(t);
    }
    if (full.contains("cond.enc")) {
        const Matrix& enc = full.value(full.id("cond.enc"));
        std::vector<Encoding> encs(static_cast<std::size_t>(enc.rows()));
        for (Eigen::Index r = 0; r < enc.rows(); ++r)
            for (int c = 0; c < kEncodingLength; ++c)
                encs[static_cast<std::size_t>(r)].slot(c) = static_cast<int>(std::lround(enc(r, c)));
        gp.condition(encs, full.value(full.id("cond.s")), full.value(full.id("cond.y")));
    }
    return gp;
}

// ---------------------------------------------------------------------------
// Encoder

Var Dmogp::encode_on_tape(Tape& t, std::span<const Encoding> encs) const {
    if (encs.empty()) throw std::invalid_argument("encoding an empty batch");
    SearchSpaceSpec structural = spec_;
    structural.macro_whitelist.reset();
    std::vector<Encoding> canon;
    canon.reserve(encs.size());
    for (const auto& e : encs) {
        require_valid(e, structural);
        canon.push_back(canonicalize(e));
    }
    const auto rows = static_cast<Eigen::Index>(canon.size());
    const int types = spec_.num_ops + 2;
    const int h = cfg_.hidden;

    auto one_hot = [&](auto type_of) {
        Matrix x = Matrix::Zero(rows, types);
        for (Eigen::Index r = 0; r < rows; ++r) x(r, type_of(canon[static_cast<std::size_t>(r)])) = 1.0;
        return t.constant(std::move(x));
    };
    auto mask = [&](auto pred) {
        nn::Vector w(rows);
        for (Eigen::Index r = 0; r < rows; ++r) w[r] = pred(canon[static_cast<std::size_t>(r)]) ? 1.0 : 0.0;
        return w;
    };
    auto fun = [&](const Dense& gate, const Dense& map, Var agg) {
        return t.hadamard(gate(t, store_, agg), map(t, store_, agg));
    };

    const Var x_in = one_hot([&](const Encoding&) { return spec_.num_ops; });
    const Var x_out = one_hot([&](const Encoding&) { return spec_.num_ops + 1; });
    std::vector<Var> x_mid;
    for (int i = 0; i < kNumIntermediate; ++i) x_mid.push_back(one_hot([i](const Encoding& e) { return e.ops[i]; }));
    std::vector<nn::Vector> leaf;
    for (int i = 0; i < kNumIntermediate; ++i) leaf.push_back(mask([i](const Encoding& e) { return leaf_mask(e)[i]; }));
    const Var zero = t.constant(Matrix::Zero(rows, h));

    // Input to output: each vertex aggregates its single predecessor.
    std::vector<Var> hf{fwd_.step(t, store_, x_in, zero)};
    for (int i = 1; i <= kNumIntermediate; ++i) {
        std::vector<int> preds(canon.size());
        for (std::size_t r = 0; r < canon.size(); ++r) preds[r] = canon[r].pred[i - 1];
        hf.push_back(fwd_.step(t, store_, x_mid[i - 1], fun(fwd_gate_, fwd_map_, t.select_rows(hf, preds))));
    }
    Var agg_out = t.scale_rows(hf[1], leaf[0]);
    for (int i = 2; i <= kNumIntermediate; ++i) agg_out = t.add(agg_out, t.scale_rows(hf[i], leaf[i - 1]));
    const Var hf_out = fwd_.step(t, store_, x_out, fun(fwd_gate_, fwd_map_, agg_out));

    // Output to input: each vertex aggregates its successors.
    const Var hr_out = rev_.step(t, store_, x_out, zero);
    std::vector<Var> hr(kNumIntermediate + 1);
    for (int i = kNumIntermediate; i >= 1; --i) {
        Var agg = t.scale_rows(hr_out, leaf[i - 1]);
        for (int c = i + 1; c <= kNumIntermediate; ++c) {
            agg = t.add(agg, t.scale_rows(hr[c], mask([&](const Encoding& e) { return e.pred[c - 1] == i; })));
        }
        hr[i] = rev_.step(t, store_, x_mid[i - 1], fun(rev_gate_, rev_map_, agg));
    }
    Var agg_in = t.scale_rows(hr[1], mask([](const Encoding& e) { return e.pred[0] == 0; }));
    for (int c = 2; c <= kNumIntermediate; ++c) {
        agg_in = t.add(agg_in, t.scale_rows(hr[c], mask([&](const Encoding& e) { return e.pred[c - 1] == 0; })));
    }
    const Var hr_in = rev_.step(t, store_, x_in, fun(rev_gate_, rev_map_, agg_in));

    return readout_(t, store_, t.concat_cols(hf_out, hr_in));
}

Var Dmogp::embed_on_tape(Tape& tape, std::span<const Encoding> encs, const Eigen::MatrixXd& s) const {
    if (static_cast<std::size_t>(s.rows()) != encs.size() || s.cols() != cfg_.feature_dim) {
        throw std::invalid_argument("task features must be " + std::to_string(encs.size()) + " x " +
                                    std::to_string(cfg_.feature_dim));
    }
    const Var f = encode_on_tape(tape, encs);
    return combiner_(tape, store_, tape.concat_cols(f, tape.constant(s)));
}

Eigen::MatrixXd Dmogp::encode_architectures(std::span<const Encoding> encs) const {
    Tape tape;
    return tape.value(encode_on_tape(tape, encs));
}

Eigen::MatrixXd Dmogp::embed(std::span<const Encoding> encs, const Eigen::MatrixXd& s) const {
    Tape tape;
    return tape.value(embed_on_tape(tape, encs, s));
}

// ---------------------------------------------------------------------------
// Kernel

double Dmogp::amplitude() const { return std::exp(store_.value(log_amp_)(0, 0)); }
double Dmogp::lengthscale() const { return std::exp(store_.value(log_ls_)(0, 0)); }

Eigen::MatrixXd Dmogp::coregionalization() const {
    const Matrix& l = store_.value(chol_);
    Matrix b = l * l.transpose();
    b.diagonal() += store_.value(log_kappa_).row(0).transpose().array().exp().matrix();
    return 0.5 * (b + b.transpose());
}

Eigen::VectorXd Dmogp::noise() const { return store_.value(log_noise_).row(0).transpose().array().exp(); }

double Dmogp::rbf(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) const {
    const double amp = amplitude();
    const double ls = lengthscale();
    return amp * amp * std::exp(-(z1 - z2).squaredNorm() / (2.0 * ls * ls));
}

Eigen::MatrixXd Dmogp::rbf_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const {
    const double amp = amplitude();
    const double ls = lengthscale();
    Matrix r(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            r(i, j) = amp * amp * std::exp(-(a.row(i) - b.row(j)).squaredNorm() / (2.0 * ls * ls));
    return r;
}

Eigen::MatrixXd Dmogp::deep_kernel(const Encoding& e1, const Eigen::VectorXd& s1, const Encoding& e2,
                                   const Eigen::VectorXd& s2) const {
    std::vector<Encoding> encs{e1, e2};
    Matrix s(2, s1.size());
    s.row(0) = s1.transpose();
    s.row(1) = s2.transpose();
    const Matrix z = embed(encs, s);
    return rbf(z.row(0).transpose(), z.row(1).transpose()) * coregionalization();
}

Eigen::MatrixXd Dmogp::full_covariance(const Eigen::MatrixXd& r) const {
    const Matrix b = coregionalization();
    const Eigen::VectorXd d = noise();
    const Eigen::Index n = r.rows();
    const int m = kNumObjectives;
    Matrix c(n * m, n * m);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index bb = 0; bb < n; ++bb) c.block(a * m, bb * m, m, m) = r(a, bb) * b;
    for (Eigen::Index a = 0; a < n; ++a)
        for (int i = 0; i < m; ++i) c(a * m + i, a * m + i) += d[i];
    return c;
}

namespace {

/// Cholesky with the jitter ladder 0, 1e-8, 1e-6, 1e-4.
double factorize(const Matrix& c, Eigen::LLT<Matrix>& llt) {
    for (double jitter : {0.0, 1e-8, 1e-6, 1e-4}) {
        Matrix cj = c;
        cj.diagonal().array() += jitter;
        llt.compute(cj);
        if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) return jitter;
    }
    std::ostringstream msg;
    msg << "covariance of size " << c.rows() << " is not positive definite even with jitter 1e-4"
        << " (min diagonal " << c.diagonal().minCoeff() << ", max " << c.diagonal().maxCoeff() << ")";
    throw std::runtime_error(msg.str());
}

Eigen::VectorXd stack_rows(const Matrix& y) {
    Eigen::VectorXd v(y.size());
    for (Eigen::Index a = 0; a < y.rows(); ++a)
        for (Eigen::Index i = 0; i < y.cols(); ++i) v[a * y.cols() + i] = y(a, i);
    return v;
}

}  // namespace

double Dmogp::negative_log_marginal_likelihood(std::span<const Encoding> encs, const Eigen::MatrixXd& s,
                                               const Eigen::MatrixXd& y, bool accumulate) {
    const int m = kNumObjectives;
    if (static_cast<std::size_t>(y.rows()) != encs.size() || y.cols() != m) {
        throw std::invalid_argument("targets must be one row of two objectives per input");
    }
    Tape tape;
    const Var zvar = embed_on_tape(tape, encs, s);
    const Matrix& z = tape.value(zvar);
    const Eigen::Index n = z.rows();
    const Matrix r = rbf_matrix(z, z);
    const Matrix b = coregionalization();
    const Eigen::VectorXd d = noise();
    const Matrix c = full_covariance(r);
    Eigen::LLT<Matrix> llt;
    factorize(c, llt);
    const Eigen::VectorXd yv = stack_rows(y);
    const Eigen::VectorXd alpha = llt.solve(yv);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double nll = 0.5 * yv.dot(alpha) + 0.5 * logdet +
                       0.5 * static_cast<double>(n * m) * std::log(2.0 * std::numbers::pi);
    if (!accumulate) return nll;

    // dL/dC for L = log p(y); parameter gradients below are for -L.
    const Matrix cinv = llt.solve(Matrix::Identity(n * m, n * m));
    const Matrix g = 0.5 * (alpha * alpha.transpose() - cinv);
    Matrix d_r(n, n);
    Matrix d_b = Matrix::Zero(m, m);
    Eigen::VectorXd d_noise = Eigen::VectorXd::Zero(m);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index bb = 0; bb < n; ++bb) {
            const auto blk = g.block(a * m, bb * m, m, m);
            d_r(a, bb) = (blk.array() * b.array()).sum();
            d_b += r(a, bb) * blk;
        }
        d_noise += g.block(a * m, a * m, m, m).diagonal();
    }
    const double ls = lengthscale();
    const Matrix w = d_r.cwiseProduct(r);
    Matrix dist2(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index bb = 0; bb < n; ++bb) dist2(a, bb) = (z.row(a) - z.row(bb)).squaredNorm();
    const double d_log_amp = 2.0 * w.sum();
    const double d_log_ls = w.cwiseProduct(dist2).sum() / (ls * ls);
    const Eigen::VectorXd wsum = w.rowwise().sum();
    const Matrix d_z = -(2.0 / (ls * ls)) * (wsum.asDiagonal() * z - w * z);
    const Matrix& l = store_.value(chol_);
    const Matrix d_l = 2.0 * d_b * l;
    const Eigen::VectorXd kappa = store_.value(log_kappa_).row(0).transpose().array().exp();

    auto add_grad = [&](nn::ParamStore::Id id, const Matrix& delta) {
        Matrix& gr = store_.grad(id);
        if (gr.rows() != delta.rows() || gr.cols() != delta.cols()) gr.setZero(delta.rows(), delta.cols());
        gr += delta;
    };
    add_grad(log_amp_, Matrix::Constant(1, 1, -d_log_amp));
    add_grad(log_ls_, Matrix::Constant(1, 1, -d_log_ls));
    add_grad(chol_, -d_l);
    add_grad(log_kappa_, -(d_b.diagonal().array() * kappa.array()).matrix().transpose());
    add_grad(log_noise_, -(d_noise.array() * d.array()).matrix().transpose());
    tape.backward(zvar, -d_z);
    return nll;
}

// ---------------------------------------------------------------------------
// Training and posterior

DmogpFitResult Dmogp::fit(std::span<const GpSample> data, std::span<const TaskFeatureDistribution> features,
                          const DmogpConfig& cfg, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("surrogate corpus is empty");
    if (cfg.batch < 2) throw std::invalid_argument("surrogate batch must hold at least two inputs");
    for (const auto& f : features) f.check(cfg_.feature_dim);
    transform_ = TargetTransform::fit(data, features.size());
    const int m = kNumObjectives;
    Matrix targets(static_cast<Eigen::Index>(data.size()), m);
    for (std::size_t i = 0; i < data.size(); ++i)
        targets.row(static_cast<Eigen::Index>(i)) = transform_.to_target(data[i].obj, data[i].task);

    DmogpFitResult result;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t num_batches = (data.size() + cfg.batch - 1) / cfg.batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t k = 0; k < num_batches; ++k) {
            const std::size_t begin = k * data.size() / num_batches;
            const std::size_t end = (k + 1) * data.size() / num_batches;
            const auto rows = static_cast<Eigen::Index>(end - begin);
            std::vector<Encoding> encs;
            Matrix s(rows, cfg_.feature_dim), y(rows, m);
            for (std::size_t i = begin; i < end; ++i) {
                const auto row = static_cast<Eigen::Index>(i - begin);
                encs.push_back(data[order[i]].enc);
                s.row(row) = features[data[order[i]].task].sample(rng).transpose();
                y.row(row) = targets.row(static_cast<Eigen::Index>(order[i]));
            }
            store_.zero_grad();
            const double nll = negative_log_marginal_likelihood(encs, s, y, true);
            if (!std::isfinite(nll)) {
                throw std::runtime_error("surrogate marginal likelihood is non-finite at epoch " +
                                         std::to_string(epoch));
            }
            if (nn::adam_update(store_, cfg.adam) == nn::UpdateStatus::rejected_nonfinite) ++result.rejected_steps;
            total += -nll;
        }
        result.likelihood_trace.push_back(total / static_cast<double>(data.size() * m));
    }

    std::vector<std::size_t> keep;
    if (data.size() <= cfg.max_conditioning) {
        keep.resize(data.size());
        std::iota(keep.begin(), keep.end(), 0);
    } else {
        for (std::size_t k = 0; k < cfg.max_conditioning; ++k) keep.push_back(k * data.size() / cfg.max_conditioning);
    }
    std::vector<Encoding> encs;
    Matrix s(static_cast<Eigen::Index>(keep.size()), cfg_.feature_dim);
    Matrix y(static_cast<Eigen::Index>(keep.size()), m);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const auto& d = data[keep[k]];
        encs.push_back(d.enc);
        s.row(static_cast<Eigen::Index>(k)) = features[d.task].mu.transpose();
        y.row(static_cast<Eigen::Index>(k)) = targets.row(static_cast<Eigen::Index>(keep[k]));
    }
    condition(encs, s, y);
    return result;
}

void Dmogp::condition(std::span<const Encoding> encs, const Eigen::MatrixXd& s, const Eigen::MatrixXd& y) {
    if (encs.empty()) throw std::invalid_argument("conditioning set is empty");
    if (static_cast<std::size_t>(y.rows()) != encs.size() || y.cols() != kNumObjectives) {
        throw std::invalid_argument("targets must be one row of two objectives per input");
    }
    const Matrix z = embed(encs, s);
    jitter_ = factorize(full_covariance(rbf_matrix(z, z)), llt_);
    const Eigen::VectorXd a = llt_.solve(stack_rows(y));
    alpha_.resize(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r)
        for (Eigen::Index i = 0; i < y.cols(); ++i) alpha_(r, i) = a[r * y.cols() + i];
    cond_encs_.assign(encs.begin(), encs.end());
    cond_s_ = s;
    cond_y_ = y;
    cond_z_ = z;
}

std::vector<GpPrediction> Dmogp::predict_batch(std::span<const Encoding> encs, const Eigen::VectorXd& s) const {
    if (!conditioned()) throw std::logic_error("surrogate has not been fitted");
    if (encs.empty()) return {};
    // Each isomorphism class is predicted once so that duplicates agree bit for bit.
    std::vector<Encoding> unique;
    std::vector<std::size_t> slot(encs.size());
    std::unordered_map<Encoding, std::size_t, EncodingHash> seen;
    for (std::size_t i = 0; i < encs.size(); ++i) {
        const auto [it, fresh] = seen.try_emplace(canonicalize(encs[i]), unique.size());
        if (fresh) unique.push_back(it->first);
        slot[i] = it->second;
    }
    const auto preds = predict_unique(unique, s);
    std::vector<GpPrediction> out;
    out.reserve(encs.size());
    for (std::size_t i : slot) out.push_back(preds[i]);
    return out;
}

std::vector<GpPrediction> Dmogp::predict_unique(std::span<const Encoding> encs, const Eigen::VectorXd& s) const {
    std::vector<GpPrediction> out;
    const int m = kNumObjectives;
    const Matrix b = coregionalization();
    const double amp2 = amplitude() * amplitude();
    const Eigen::Index n = cond_z_.rows();
    constexpr std::size_t kChunk = 128;
    out.reserve(encs.size());
    for (std::size_t start = 0; start < encs.size(); start += kChunk) {
        const std::size_t end = std::min(encs.size(), start + kChunk);
        const auto q = static_cast<Eigen::Index>(end - start);
        const Matrix zq = embed(encs.subspan(start, end - start), s.transpose().replicate(q, 1));
        const Matrix rq = rbf_matrix(cond_z_, zq);  // n x q
        const Matrix mean = rq.transpose() * alpha_ * b;
        Matrix k(n * m, q * m);
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index c = 0; c < q; ++c) k.block(a * m, c * m, m, m) = rq(a, c) * b;
        const Matrix v = llt_.matrixL().solve(k);
        for (Eigen::Index c = 0; c < q; ++c) {
            const auto vc = v.middleCols(c * m, m);
            Matrix cov = amp2 * b - vc.transpose() * vc;
            cov = 0.5 * (cov + cov.transpose());
            out.push_back(GpPrediction{mean.row(c).transpose(), cov});
        }
    }
    return out;
}

GpPrediction Dmogp::predict(const Encoding& enc, const Eigen::VectorXd& s) const {
    return predict_batch(std::span<const Encoding>(&enc, 1), s).front();
}

std::vector<ScoredCandidate> Dmogp::score_candidates(std::span<const Encoding> cands, const Eigen::VectorXd& s) const {
    std::vector<ScoredCandidate> out;
    if (cands.empty()) return out;
    const auto preds = predict_batch(cands, s);
    out.reserve(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        out.push_back(ScoredCandidate{cands[i], transform_.to_objective(preds[i].mean), preds[i].cov.diagonal()});
    }
    return out;
}

}  // namespace kegnas
