#pragma once

// Toy restoration problems with exact Bayesian posteriors.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "flow.hpp"
#include "rng.hpp"

namespace ttsflow {

using Matrix = Eigen::MatrixXd;

/// observation = matrix * truth + noise_std * xi
struct DegradationOp {
    Matrix matrix;
    double noise_std = 0.1;

    void validate() const {
        require(matrix.rows() > 0 && matrix.cols() > 0, "DegradationOp: empty matrix");
        require(matrix.allFinite(), "DegradationOp: matrix has non-finite entries");
        require(std::isfinite(noise_std) && noise_std > 0.0,
                "DegradationOp: noise_std must be positive");
    }

    [[nodiscard]] Eigen::Index input_dim() const { return matrix.cols(); }
    [[nodiscard]] Eigen::Index output_dim() const { return matrix.rows(); }

    static DegradationOp identity(Eigen::Index dim, double noise_std) {
        return {Matrix::Identity(dim, dim), noise_std};
    }

    /// 3-tap [1/4, 1/2, 1/4] blur with replicated edges, then keep every `factor`-th sample.
    static DegradationOp blur_downsample(Eigen::Index dim, Eigen::Index factor, double noise_std) {
        require(dim > 0 && factor >= 1, "blur_downsample: bad dimensions");
        const Eigen::Index rows = (dim + factor - 1) / factor;
        Matrix m = Matrix::Zero(rows, dim);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const Eigen::Index c = r * factor;
            m(r, std::max<Eigen::Index>(c - 1, 0)) += 0.25;
            m(r, c) += 0.5;
            m(r, std::min<Eigen::Index>(c + 1, dim - 1)) += 0.25;
        }
        return {std::move(m), noise_std};
    }
};

struct GaussianComponent {
    double weight = 1.0;
    Vector mean;
    Matrix cov;
};

/// Full-covariance Gaussian mixture with cached Cholesky factors.
class GaussianMixture {
public:
    GaussianMixture() = default;

    explicit GaussianMixture(std::vector<GaussianComponent> components)
        : components_(std::move(components)) {
        require(!components_.empty(), "GaussianMixture: no components");
        const Eigen::Index d = components_.front().mean.size();
        double total = 0.0;
        for (const auto& c : components_) {
            require(c.mean.size() == d && c.cov.rows() == d && c.cov.cols() == d,
                    "GaussianMixture: inconsistent dimensions");
            total += c.weight;
            Eigen::LLT<Matrix> llt(c.cov);
            require(llt.info() == Eigen::Success, "GaussianMixture: covariance not positive definite");
            const Matrix L = llt.matrixL();
            log_norm_.push_back(-L.diagonal().array().log().sum() -
                                0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
            factors_.push_back(L);
        }
        require(std::abs(total - 1.0) <= 1e-9, "GaussianMixture: weights must sum to 1");
    }

    [[nodiscard]] const std::vector<GaussianComponent>& components() const { return components_; }
    [[nodiscard]] Eigen::Index dim() const { return components_.front().mean.size(); }

    [[nodiscard]] double log_density(const Vector& x) const {
        require(x.size() == dim(), "GaussianMixture: dimension mismatch");
        std::vector<double> terms;
        terms.reserve(components_.size());
        for (std::size_t c = 0; c < components_.size(); ++c) {
            const Vector z = factors_[c].triangularView<Eigen::Lower>().solve(x - components_[c].mean);
            const double logw = components_[c].weight > 0.0
                                    ? std::log(components_[c].weight)
                                    : -std::numeric_limits<double>::infinity();
            terms.push_back(logw + log_norm_[c] - 0.5 * z.squaredNorm());
        }
        return detail::log_sum_exp(terms);
    }

    [[nodiscard]] Vector mean() const {
        Vector m = Vector::Zero(dim());
        for (const auto& c : components_) m += c.weight * c.mean;
        return m;
    }

private:
    std::vector<GaussianComponent> components_;
    std::vector<Matrix> factors_;
    std::vector<double> log_norm_;
};

struct RestorationInstance {
    std::uint64_t id = 0;
    Vector truth;
    Vector observation;
    DegradationOp op;
    FlowSpec posterior;              // isotropic projection, drives sampling
    GaussianMixture exact_posterior; // anisotropic oracle
};

inline Vector degrade(const Vector& truth, const DegradationOp& op, RngStream& rng) {
    op.validate();
    require(truth.size() == op.input_dim(), "degrade: truth dimension does not match operator");
    return op.matrix * truth + op.noise_std * rng.normal_vector(op.output_dim());
}

/// Exact mixture posterior of x0 given y = A x0 + noise, for an isotropic mixture prior.
/// Each component is conditioned by the conjugate update; weights are multiplied by the
/// component evidence N(y; A mu, sigma^2 A A^T + s^2 I) and renormalized.
inline GaussianMixture exact_posterior(const FlowSpec& prior, const DegradationOp& op,
                                       const Vector& observation) {
    op.validate();
    require(op.input_dim() == prior.dim(), "posterior: operator does not match prior dimension");
    require(observation.size() == op.output_dim(), "posterior: observation dimension mismatch");
    const Matrix& A = op.matrix;
    const double noise_var = op.noise_std * op.noise_std;
    const Eigen::Index d = prior.dim();
    const Eigen::Index m = op.output_dim();

    std::vector<GaussianComponent> comps;
    std::vector<double> log_evidence;
    for (const auto& c : prior.components()) {
        const double prior_var = c.scale * c.scale;
        const Matrix precision =
            Matrix::Identity(d, d) / prior_var + A.transpose() * A / noise_var;
        Eigen::LLT<Matrix> llt(precision);
        require(llt.info() == Eigen::Success, "posterior: singular update");
        Matrix cov = llt.solve(Matrix::Identity(d, d));
        cov = 0.5 * (cov + cov.transpose());
        const Vector mean = llt.solve(c.mean / prior_var + A.transpose() * observation / noise_var);

        const Matrix evid_cov = prior_var * A * A.transpose() + noise_var * Matrix::Identity(m, m);
        Eigen::LLT<Matrix> evid(evid_cov);
        require(evid.info() == Eigen::Success, "posterior: singular evidence covariance");
        const Matrix L = evid.matrixL();
        const Vector z = L.triangularView<Eigen::Lower>().solve(observation - A * c.mean);
        log_evidence.push_back((c.weight > 0.0 ? std::log(c.weight)
                                               : -std::numeric_limits<double>::infinity()) -
                               L.diagonal().array().log().sum() -
                               0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi) -
                               0.5 * z.squaredNorm());
        comps.push_back({0.0, mean, cov});
    }
    const double norm = detail::log_sum_exp(log_evidence);
    for (std::size_t i = 0; i < comps.size(); ++i) comps[i].weight = std::exp(log_evidence[i] - norm);
    return GaussianMixture(std::move(comps));
}

/// Projects each posterior component onto an isotropic Gaussian with variance trace(cov)/d.
inline FlowSpec isotropic_projection(const GaussianMixture& mixture) {
    std::vector<MixtureComponent> comps;
    double total = 0.0;
    for (const auto& c : mixture.components()) total += c.weight;
    for (const auto& c : mixture.components()) {
        const double var = c.cov.trace() / static_cast<double>(c.mean.size());
        comps.push_back({c.weight / total, c.mean, std::sqrt(std::max(var, kVarianceFloor))});
    }
    return FlowSpec(std::move(comps));
}

inline FlowSpec posterior_flow(const FlowSpec& prior, const DegradationOp& op,
                               const Vector& observation) {
    return isotropic_projection(exact_posterior(prior, op, observation));
}

struct SuiteConfig {
    Eigen::Index dim = 16;
    Eigen::Index downsample = 2;
    double noise_std = 0.1;
    int prior_components = 2;
    double prior_scale = 0.5;
    double mean_scale = 1.0;
};

/// Random smooth-ish prior shared by a suite: component means are blurred Gaussian vectors.
inline FlowSpec make_suite_prior(std::uint64_t seed, const SuiteConfig& cfg) {
    require(cfg.prior_components >= 1, "suite: need at least one prior component");
    RngStream rng(SeedKey(seed, Substream::suite).child(0));
    const DegradationOp blur = DegradationOp::blur_downsample(cfg.dim, 1, 1.0);
    std::vector<MixtureComponent> comps;
    const double w = 1.0 / cfg.prior_components;
    for (int c = 0; c < cfg.prior_components; ++c) {
        Vector mean = cfg.mean_scale * (blur.matrix * rng.normal_vector(cfg.dim)) * std::sqrt(8.0 / 3.0);
        comps.push_back({w, std::move(mean), cfg.prior_scale});
    }
    return FlowSpec(std::move(comps));
}

/// Builds one instance: truth drawn from the prior, observed through op.
inline RestorationInstance make_instance(std::uint64_t id, const FlowSpec& prior,
                                         const DegradationOp& op, RngStream& rng) {
    double u = rng.uniform();
    std::size_t pick = 0;
    for (; pick + 1 < prior.components().size(); ++pick) {
        u -= prior.components()[pick].weight;
        if (u < 0.0) break;
    }
    const auto& comp = prior.components()[pick];
    RestorationInstance inst;
    inst.id = id;
    inst.truth = comp.mean + comp.scale * rng.normal_vector(prior.dim());
    inst.observation = degrade(inst.truth, op, rng);
    inst.op = op;
    inst.exact_posterior = exact_posterior(prior, op, inst.observation);
    inst.posterior = isotropic_projection(inst.exact_posterior);
    return inst;
}

/// Deterministic per seed; instance i depends only on (seed, i).
inline std::vector<RestorationInstance> make_suite(std::uint64_t seed, int count,
                                                   const SuiteConfig& cfg = {}) {
    require(count >= 1, "make_suite: count must be at least 1");
    const FlowSpec prior = make_suite_prior(seed, cfg);
    const DegradationOp op = DegradationOp::blur_downsample(cfg.dim, cfg.downsample, cfg.noise_std);
    std::vector<RestorationInstance> suite;
    suite.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        RngStream rng(SeedKey(seed, Substream::suite).child(1).child(static_cast<std::uint64_t>(i)));
        suite.push_back(make_instance(static_cast<std::uint64_t>(i), prior, op, rng));
    }
    return suite;
}

} // namespace ttsflow
