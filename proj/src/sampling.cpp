#include "vibefuse/sampling.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/random.hpp"

#include <cmath>
#include <limits>

namespace vibefuse::sampling {

namespace {
constexpr const char* kModule = "uq-sampling";

double poly(const double* c, int n, double x) {
  double acc = c[n - 1];
  for (int i = n - 2; i >= 0; --i) acc = acc * x + c[i];
  return acc;
}
}  // namespace

SamplingSpec SamplingSpec::isotropic(int dimension, double std, int count, std::uint64_t seed) {
  SamplingSpec spec;
  spec.dimension = dimension;
  spec.means = Eigen::VectorXd::Zero(dimension);
  spec.stds = Eigen::VectorXd::Constant(dimension, std);
  spec.count = count;
  spec.seed = seed;
  return spec;
}

void SamplingSpec::validate() const {
  if (dimension < 1) throw DomainError(kModule, "dimension must be at least 1");
  if (count < 1) throw DomainError(kModule, "sample count must be at least 1");
  if (means.size() != dimension || stds.size() != dimension)
    throw DomainError(kModule, "means/stds length must equal the dimension");
  if (!(stds.array() > 0.0).all()) throw DomainError(kModule, "standard deviations must be positive");
  if (reject_at_or_below && !(means.array() > *reject_at_or_below).all())
    throw DomainError(kModule, "means must lie above the rejection threshold");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError(kModule, "probability outside [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();

  static constexpr double a[8] = {3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
                                  1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
                                  3.3430575583588128105e4, 2.5090809287301226727e3};
  static constexpr double b[8] = {1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
                                  5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
                                  2.8729085735721942674e4, 5.2264952788528545610e3};
  static constexpr double c[8] = {1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
                                  3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
                                  2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr double d[8] = {1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
                                  6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
                                  5.47593808499534494600e-4, 1.05075007164441684324e-9};
  static constexpr double e[8] = {6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
                                  2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                                  2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr double f[8] = {1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
                                  1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-5,
                                  1.42151175831644588870e-7, 2.04426310338993978564e-15};

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(a, 8, r) / poly(b, 8, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double x;
  if (r <= 5.0) {
    r -= 1.6;
    x = poly(c, 8, r) / poly(d, 8, r);
  } else {
    r -= 5.0;
    x = poly(e, 8, r) / poly(f, 8, r);
  }
  return q < 0.0 ? -x : x;
}

Eigen::MatrixXd lhs_normal_samples(const SamplingSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int n = spec.count;
  Eigen::MatrixXd out(n, spec.dimension);
  for (int j = 0; j < spec.dimension; ++j) {
    const std::vector<int> strata = permutation(n, rng);
    for (int i = 0; i < n; ++i) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw DomainError(kModule, "could not draw an admissible value in a stratum");
        const double u = (strata[i] + uniform01(rng)) / n;
        if (u <= 0.0) continue;
        const double x = spec.means[j] + spec.stds[j] * normal_quantile(u);
        if (spec.reject_at_or_below && x <= *spec.reject_at_or_below) continue;
        out(i, j) = x;
        break;
      }
    }
  }
  return out;
}

}  // namespace vibefuse::sampling
