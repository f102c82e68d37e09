#include "normdae/survival.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "normdae/errors.hpp"

namespace normdae::surv {

namespace {

void validate_records(const std::vector<SurvivalRecord>& records, size_t n_cov) {
    if (records.empty()) throw DataError("survival: empty record set");
    for (const SurvivalRecord& r : records) {
        if (!(r.duration > 0.0) || !std::isfinite(r.duration)) {
            throw DataError("survival: subject " + r.id + " has non-positive duration");
        }
        if (r.covariates.size() != n_cov) {
            throw DimensionError("survival: subject " + r.id + " has " +
                                 std::to_string(r.covariates.size()) + " covariates, expected " +
                                 std::to_string(n_cov));
        }
        for (double v : r.covariates) {
            if (!std::isfinite(v)) throw DataError("survival: subject " + r.id + " has non-finite covariate");
        }
    }
}

// Lower-triangular Cholesky of a symmetric PSD matrix; returns false and the
// failing pivot index when the matrix is numerically singular.
bool cholesky(std::vector<std::vector<double>>& a, size_t& bad_pivot) {
    const size_t p = a.size();
    double max_diag = 0.0;
    for (size_t i = 0; i < p; ++i) max_diag = std::max(max_diag, std::abs(a[i][i]));
    const double tiny = std::max(max_diag, 1.0) * 1e-12;
    for (size_t i = 0; i < p; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
            if (i == j) {
                if (s <= tiny) {
                    bad_pivot = i;
                    return false;
                }
                a[i][i] = std::sqrt(s);
            } else {
                a[i][j] = s / a[j][j];
            }
        }
        for (size_t j = i + 1; j < p; ++j) a[i][j] = 0.0;
    }
    return true;
}

std::vector<double> cholesky_solve(const std::vector<std::vector<double>>& L,
                                   const std::vector<double>& b) {
    const size_t p = L.size();
    std::vector<double> y(p), x(p);
    for (size_t i = 0; i < p; ++i) {
        double s = b[i];
        for (size_t k = 0; k < i; ++k) s -= L[i][k] * y[k];
        y[i] = s / L[i][i];
    }
    for (size_t i = p; i-- > 0;) {
        double s = y[i];
        for (size_t k = i + 1; k < p; ++k) s -= L[k][i] * x[k];
        x[i] = s / L[i][i];
    }
    return x;
}

std::vector<std::vector<double>> cholesky_inverse(const std::vector<std::vector<double>>& L) {
    const size_t p = L.size();
    std::vector<std::vector<double>> inv(p, std::vector<double>(p, 0.0));
    for (size_t c = 0; c < p; ++c) {
        std::vector<double> e(p, 0.0);
        e[c] = 1.0;
        std::vector<double> col = cholesky_solve(L, e);
        for (size_t r = 0; r < p; ++r) inv[r][c] = col[r];
    }
    // Symmetrize away roundoff.
    for (size_t i = 0; i < p; ++i) {
        for (size_t j = 0; j < i; ++j) {
            const double v = 0.5 * (inv[i][j] + inv[j][i]);
            inv[i][j] = v;
            inv[j][i] = v;
        }
    }
    return inv;
}

struct CoxDerivatives {
    double loglik = 0.0;
    std::vector<double> grad;
    std::vector<std::vector<double>> neg_hessian;  // observed information
};

// Efron-corrected partial likelihood and derivatives. Subjects are scanned
// from the largest duration down, growing the risk-set accumulators; tied
// deaths at a time share the risk set with the Efron fractional downweight.
CoxDerivatives cox_derivatives(const std::vector<SurvivalRecord>& records,
                               const std::vector<double>& beta, bool with_derivatives) {
    const size_t n = records.size();
    const size_t p = beta.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].duration > records[b].duration;
    });

    std::vector<double> w(n), lp(n);
    for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (size_t k = 0; k < p; ++k) s += beta[k] * records[i].covariates[k];
        lp[i] = s;
        w[i] = std::exp(s);
        if (!std::isfinite(w[i])) {
            throw NumericError("cox: overflow in risk weights (|linear predictor| too large)");
        }
    }

    CoxDerivatives out;
    out.grad.assign(p, 0.0);
    out.neg_hessian.assign(p, std::vector<double>(p, 0.0));

    double S_R = 0.0;
    std::vector<double> V_R(p, 0.0);
    std::vector<std::vector<double>> M_R(p, std::vector<double>(p, 0.0));

    size_t i = 0;
    while (i < n) {
        const double t = records[order[i]].duration;
        size_t j = i;
        std::vector<size_t> deaths;
        while (j < n && records[order[j]].duration == t) {
            const size_t idx = order[j];
            S_R += w[idx];
            if (with_derivatives) {
                for (size_t a = 0; a < p; ++a) {
                    V_R[a] += w[idx] * records[idx].covariates[a];
                    for (size_t b = 0; b <= a; ++b) {
                        M_R[a][b] += w[idx] * records[idx].covariates[a] * records[idx].covariates[b];
                    }
                }
            }
            if (records[idx].event) deaths.push_back(idx);
            ++j;
        }
        if (!deaths.empty()) {
            const double d = static_cast<double>(deaths.size());
            double S_D = 0.0;
            std::vector<double> V_D(p, 0.0);
            std::vector<std::vector<double>> M_D(p, std::vector<double>(p, 0.0));
            for (size_t idx : deaths) {
                out.loglik += lp[idx];
                S_D += w[idx];
                if (with_derivatives) {
                    for (size_t a = 0; a < p; ++a) {
                        out.grad[a] += records[idx].covariates[a];
                        V_D[a] += w[idx] * records[idx].covariates[a];
                        for (size_t b = 0; b <= a; ++b) {
                            M_D[a][b] +=
                                w[idx] * records[idx].covariates[a] * records[idx].covariates[b];
                        }
                    }
                }
            }
            for (size_t k = 0; k < deaths.size(); ++k) {
                const double f = static_cast<double>(k) / d;
                const double denom = S_R - f * S_D;
                if (!(denom > 0.0)) throw NumericError("cox: non-positive risk denominator");
                out.loglik -= std::log(denom);
                if (with_derivatives) {
                    std::vector<double> u(p);
                    for (size_t a = 0; a < p; ++a) u[a] = V_R[a] - f * V_D[a];
                    for (size_t a = 0; a < p; ++a) {
                        out.grad[a] -= u[a] / denom;
                        for (size_t b = 0; b <= a; ++b) {
                            const double m = M_R[a][b] - f * M_D[a][b];
                            out.neg_hessian[a][b] += m / denom - u[a] * u[b] / (denom * denom);
                        }
                    }
                }
            }
        }
        i = j;
    }
    if (with_derivatives) {
        for (size_t a = 0; a < p; ++a) {
            for (size_t b = a + 1; b < p; ++b) out.neg_hessian[a][b] = out.neg_hessian[b][a];
        }
    }
    return out;
}

} // namespace

double cox_partial_loglik(const std::vector<SurvivalRecord>& records,
                          const std::vector<double>& beta) {
    validate_records(records, beta.size());
    return cox_derivatives(records, beta, /*with_derivatives=*/false).loglik;
}

CoxFit cox_fit(const std::vector<SurvivalRecord>& records,
               const std::vector<std::string>& covariate_names) {
    const size_t p = covariate_names.size();
    if (p == 0) throw ConfigError("cox: need at least one covariate");
    validate_records(records, p);
    size_t n_events = 0;
    for (const SurvivalRecord& r : records) n_events += r.event ? 1 : 0;
    if (n_events < 2) {
        throw DegenerateInputError("cox: need at least 2 observed events, got " +
                                   std::to_string(n_events));
    }
    for (size_t k = 0; k < p; ++k) {
        const double first = records[0].covariates[k];
        bool varies = false;
        for (const SurvivalRecord& r : records) {
            if (r.covariates[k] != first) {
                varies = true;
                break;
            }
        }
        if (!varies) {
            throw CollinearityError("cox: covariate '" + covariate_names[k] +
                                    "' has zero variance across subjects");
        }
    }

    std::vector<double> beta(p, 0.0);
    double ll = cox_derivatives(records, beta, false).loglik;
    const double ll_null = ll;

    CoxFit fit;
    fit.names = covariate_names;
    fit.loglik_null = ll_null;

    constexpr int kMaxIter = 100;
    constexpr double kGradTol = 1e-7;
    constexpr double kLikTol = 1e-9;
    constexpr double kSeparationBound = 50.0;

    int iter = 0;
    double grad_norm = 0.0;
    bool converged = false;
    while (iter < kMaxIter) {
        ++iter;
        CoxDerivatives d = cox_derivatives(records, beta, true);
        grad_norm = 0.0;
        for (double g : d.grad) grad_norm = std::max(grad_norm, std::abs(g));
        if (grad_norm < kGradTol) {
            converged = true;
            break;
        }
        std::vector<std::vector<double>> L = d.neg_hessian;
        size_t bad = 0;
        if (!cholesky(L, bad)) {
            throw CollinearityError(
                "cox: information matrix is singular at covariate '" + covariate_names[bad] +
                "' (linearly dependent with earlier covariates or no information)");
        }
        std::vector<double> delta = cholesky_solve(L, d.grad);
        double new_ll = 0.0;
        std::vector<double> candidate(p);
        bool improved = false;
        for (int half = 0; half < 40; ++half) {
            for (size_t k = 0; k < p; ++k) candidate[k] = beta[k] + delta[k];
            new_ll = cox_derivatives(records, candidate, false).loglik;
            if (new_ll >= ll - 1e-12) {
                improved = true;
                break;
            }
            for (double& v : delta) v *= 0.5;
        }
        if (!improved) {
            throw ConvergenceError("cox: step halving failed to improve the partial likelihood at "
                                   "iteration " +
                                   std::to_string(iter));
        }
        for (size_t k = 0; k < p; ++k) {
            if (std::abs(candidate[k]) > kSeparationBound) {
                throw SeparationError("cox: coefficient for '" + covariate_names[k] +
                                      "' exceeded |50| — monotone partial likelihood "
                                      "(perfect separation)");
            }
        }
        const double delta_ll = std::abs(new_ll - ll);
        beta = candidate;
        ll = new_ll;
        if (delta_ll < kLikTol) {
            CoxDerivatives fin = cox_derivatives(records, beta, true);
            grad_norm = 0.0;
            for (double g : fin.grad) grad_norm = std::max(grad_norm, std::abs(g));
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw ConvergenceError("cox: Newton-Raphson did not converge in " +
                               std::to_string(kMaxIter) + " iterations (max|grad| = " +
                               std::to_string(grad_norm) + ", loglik = " + std::to_string(ll) +
                               ")");
    }

    CoxDerivatives final_d = cox_derivatives(records, beta, true);
    std::vector<std::vector<double>> L = final_d.neg_hessian;
    size_t bad = 0;
    if (!cholesky(L, bad)) {
        throw CollinearityError("cox: information matrix singular at optimum (covariate '" +
                                covariate_names[bad] + "')");
    }
    fit.covariance = cholesky_inverse(L);
    fit.coef = beta;
    fit.loglik = final_d.loglik;
    fit.iterations = iter;
    fit.final_grad_norm = grad_norm;
    fit.se.resize(p);
    fit.hazard_ratio.resize(p);
    fit.ci_low.resize(p);
    fit.ci_high.resize(p);
    fit.wald_z.resize(p);
    fit.p_value.resize(p);
    for (size_t k = 0; k < p; ++k) {
        fit.se[k] = std::sqrt(std::max(0.0, fit.covariance[k][k]));
        fit.hazard_ratio[k] = std::exp(beta[k]);
        fit.ci_low[k] = std::exp(beta[k] - 1.96 * fit.se[k]);
        fit.ci_high[k] = std::exp(beta[k] + 1.96 * fit.se[k]);
        fit.wald_z[k] = fit.se[k] > 0.0 ? beta[k] / fit.se[k] : 0.0;
        fit.p_value[k] = fit.se[k] > 0.0 ? std::min(1.0, 2.0 * normal_sf(std::abs(fit.wald_z[k])))
                                         : 1.0;
    }
    return fit;
}

std::vector<KMPoint> km_estimate(const std::vector<SurvivalRecord>& records) {
    if (records.empty()) throw DataError("km: empty record set");
    for (const SurvivalRecord& r : records) {
        if (!(r.duration > 0.0)) throw DataError("km: subject " + r.id + " has non-positive duration");
    }
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].duration < records[b].duration;
    });
    std::vector<KMPoint> curve;
    double s = 1.0;
    size_t i = 0;
    const size_t n = records.size();
    while (i < n) {
        const double t = records[order[i]].duration;
        // Everyone with duration >= t is still at risk at t: deaths at t are
        // counted before censorings at the same time leave the risk set.
        const int at_risk = static_cast<int>(n - i);
        int deaths = 0;
        size_t j = i;
        while (j < n && records[order[j]].duration == t) {
            if (records[order[j]].event) ++deaths;
            ++j;
        }
        if (deaths > 0) {
            s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
            curve.push_back({t, s, at_risk, deaths});
        }
        i = j;
    }
    return curve;
}

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DataError("ks: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const size_t n = a.size(), m = b.size();
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        const double x = std::min(a[i], b[j]);
        while (i < n && a[i] == x) ++i;
        while (j < m && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / static_cast<double>(n) -
                                 static_cast<double>(j) / static_cast<double>(m)));
    }
    TestResult r;
    r.statistic = d;
    r.n = static_cast<int>(n);
    r.m = static_cast<int>(m);
    const double ne = static_cast<double>(n) * static_cast<double>(m) /
                      static_cast<double>(n + m);
    const double lambda = std::sqrt(ne) * d;
    if (lambda < 1e-8) {
        r.p_value = 1.0;
        return r;
    }
    double p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        p += sign * term;
        if (term < 1e-12) break;
        sign = -sign;
    }
    r.p_value = std::clamp(2.0 * p, 0.0, 1.0);
    return r;
}

TestResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    if (n != y.size()) throw DimensionError("pearson: length mismatch");
    if (n < 3) throw DataError("pearson: need at least 3 observations");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) {
        throw DegenerateInputError("pearson: an input has zero variance");
    }
    TestResult r;
    r.n = static_cast<int>(n);
    r.statistic = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const int dof = static_cast<int>(n) - 2;
    if (std::abs(r.statistic) >= 1.0) {
        r.p_value = 0.0;
    } else {
        const double t = r.statistic *
                         std::sqrt(static_cast<double>(dof) /
                                   (1.0 - r.statistic * r.statistic));
        r.p_value = std::min(1.0, 2.0 * student_t_sf(std::abs(t), dof));
    }
    return r;
}

TestResult kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    if (n != y.size()) throw DimensionError("kendall: length mismatch");
    if (n < 2) throw DataError("kendall: need at least 2 observations");
    long long concordant = 0, discordant = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            const double s = dx * dy;
            if (s > 0.0) ++concordant;
            else if (s < 0.0) ++discordant;
        }
    }
    // Tie-group sizes for the tau-b denominator and the null variance.
    auto tie_sums = [](const std::vector<double>& v) {
        std::vector<double> sorted(v);
        std::sort(sorted.begin(), sorted.end());
        double s1 = 0.0, s2 = 0.0, s3 = 0.0;  // sum t(t-1), t(t-1)(t-2), t(t-1)(2t+5)
        size_t i = 0;
        while (i < sorted.size()) {
            size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i);
            s1 += t * (t - 1.0);
            s2 += t * (t - 1.0) * (t - 2.0);
            s3 += t * (t - 1.0) * (2.0 * t + 5.0);
            i = j;
        }
        return std::array<double, 3>{s1, s2, s3};
    };
    const auto [tx1, tx2, tx3] = tie_sums(x);
    const auto [ty1, ty2, ty3] = tie_sums(y);
    const double nd = static_cast<double>(n);
    const double n0 = nd * (nd - 1.0) / 2.0;
    const double n1 = tx1 / 2.0;
    const double n2 = ty1 / 2.0;
    const double denom = std::sqrt((n0 - n1) * (n0 - n2));
    if (!(denom > 0.0)) {
        throw DegenerateInputError("kendall: an input is entirely tied");
    }
    TestResult r;
    r.n = static_cast<int>(n);
    const double diff = static_cast<double>(concordant - discordant);
    r.statistic = std::clamp(diff / denom, -1.0, 1.0);
    const double v0 = nd * (nd - 1.0) * (2.0 * nd + 5.0);
    double var = (v0 - tx3 - ty3) / 18.0;
    var += tx1 * ty1 / (2.0 * nd * (nd - 1.0));
    if (n > 2) var += tx2 * ty2 / (9.0 * nd * (nd - 1.0) * (nd - 2.0));
    if (var > 0.0) {
        const double z = diff / std::sqrt(var);
        r.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    } else {
        r.p_value = 1.0;
    }
    return r;
}

double normalized_mutual_info(const std::vector<double>& x, const std::vector<double>& y,
                              int bins) {
    if (bins < 2) throw ConfigError("nmi: bins must be >= 2");
    const size_t n = x.size();
    if (n != y.size()) throw DimensionError("nmi: length mismatch");
    if (n < static_cast<size_t>(bins)) {
        throw DataError("nmi: fewer observations (" + std::to_string(n) + ") than bins (" +
                        std::to_string(bins) + ")");
    }
    auto equal_frequency_bins = [&](const std::vector<double>& v) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<int> bin(n);
        for (size_t r = 0; r < n; ++r) {
            bin[order[r]] = static_cast<int>(r * static_cast<size_t>(bins) / n);
        }
        return bin;
    };
    const std::vector<int> bx = equal_frequency_bins(x);
    const std::vector<int> by = equal_frequency_bins(y);
    std::vector<double> px(static_cast<size_t>(bins), 0.0), py(static_cast<size_t>(bins), 0.0);
    std::vector<std::vector<double>> pxy(static_cast<size_t>(bins),
                                         std::vector<double>(static_cast<size_t>(bins), 0.0));
    const double inv = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        px[static_cast<size_t>(bx[i])] += inv;
        py[static_cast<size_t>(by[i])] += inv;
        pxy[static_cast<size_t>(bx[i])][static_cast<size_t>(by[i])] += inv;
    }
    auto entropy = [](const std::vector<double>& p) {
        double h = 0.0;
        for (double v : p) {
            if (v > 0.0) h -= v * std::log(v);
        }
        return h;
    };
    const double hx = entropy(px), hy = entropy(py);
    if (!(hx > 0.0) || !(hy > 0.0)) {
        throw DegenerateInputError("nmi: a marginal distribution is degenerate");
    }
    double mi = 0.0;
    for (int a = 0; a < bins; ++a) {
        for (int b = 0; b < bins; ++b) {
            const double j = pxy[static_cast<size_t>(a)][static_cast<size_t>(b)];
            if (j > 0.0) {
                mi += j * std::log(j / (px[static_cast<size_t>(a)] * py[static_cast<size_t>(b)]));
            }
        }
    }
    return std::clamp(mi / std::sqrt(hx * hy), 0.0, 1.0);
}

MedianSplit median_split(const std::vector<double>& scores) {
    if (scores.size() < 2) throw DataError("median split: need at least 2 subjects");
    std::vector<double> sorted(scores);
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    MedianSplit out;
    out.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    for (size_t i = 0; i < n; ++i) {
        if (scores[i] <= out.median) out.low.push_back(i);
        else out.high.push_back(i);
    }
    return out;
}

SplitGroups median_split_by_id(const std::vector<std::pair<std::string, double>>& scores,
                               const std::vector<SurvivalRecord>& records) {
    if (scores.size() != records.size()) {
        throw DataError("median split: " + std::to_string(scores.size()) + " scores vs " +
                        std::to_string(records.size()) + " records");
    }
    std::map<std::string, const SurvivalRecord*> by_id;
    for (const SurvivalRecord& r : records) {
        if (!by_id.emplace(r.id, &r).second) {
            throw DataError("median split: duplicate record id '" + r.id + "'");
        }
    }
    std::vector<double> values;
    values.reserve(scores.size());
    for (const auto& [id, score] : scores) values.push_back(score);
    const MedianSplit split = median_split(values);
    SplitGroups out;
    out.median = split.median;
    auto lookup = [&](size_t i) -> const SurvivalRecord& {
        const auto it = by_id.find(scores[i].first);
        if (it == by_id.end()) {
            throw DataError("median split: score id '" + scores[i].first +
                            "' has no matching survival record");
        }
        const SurvivalRecord* rec = it->second;
        by_id.erase(it);  // each record may be claimed once
        return *rec;
    };
    for (size_t i : split.low) out.low.push_back(lookup(i));
    for (size_t i : split.high) out.high.push_back(lookup(i));
    return out;
}

std::vector<PartialEffectCurve> partial_effect_curves(const std::vector<SurvivalRecord>& records,
                                                      const CoxFit& fit, size_t vary_index,
                                                      const std::vector<double>& vary_values) {
    const size_t p = fit.coef.size();
    if (vary_index >= p) throw ConfigError("partial effect: covariate index out of range");
    validate_records(records, p);

    // Breslow cumulative baseline hazard (covariates at zero).
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].duration > records[b].duration;
    });
    std::vector<double> w(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        double s = 0.0;
        for (size_t k = 0; k < p; ++k) s += fit.coef[k] * records[i].covariates[k];
        w[i] = std::exp(s);
    }
    struct Increment {
        double time;
        double dh;
    };
    std::vector<Increment> incs;
    double s_r = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        const double t = records[order[i]].duration;
        size_t j = i;
        int deaths = 0;
        while (j < order.size() && records[order[j]].duration == t) {
            s_r += w[order[j]];
            if (records[order[j]].event) ++deaths;
            ++j;
        }
        if (deaths > 0) incs.push_back({t, static_cast<double>(deaths) / s_r});
        i = j;
    }
    std::reverse(incs.begin(), incs.end());  // ascending time

    std::vector<double> mean_cov(p, 0.0);
    for (const SurvivalRecord& r : records) {
        for (size_t k = 0; k < p; ++k) mean_cov[k] += r.covariates[k];
    }
    for (double& v : mean_cov) v /= static_cast<double>(records.size());

    std::vector<PartialEffectCurve> curves;
    for (double value : vary_values) {
        std::vector<double> profile = mean_cov;
        profile[vary_index] = value;
        double lp = 0.0;
        for (size_t k = 0; k < p; ++k) lp += fit.coef[k] * profile[k];
        const double scale = std::exp(lp);
        PartialEffectCurve c;
        c.score_value = value;
        double h0 = 0.0;
        for (const Increment& inc : incs) {
            h0 += inc.dh;
            c.times.push_back(inc.time);
            c.survival.push_back(std::exp(-h0 * scale));
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

namespace {

// Continued-fraction core of the regularized incomplete beta (Lentz).
double beta_cf(double a, double b, double x) {
    constexpr double kFpMin = 1e-300;
    constexpr int kMaxIter = 300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-14) return h;
    }
    throw NumericError("incomplete beta: continued fraction did not converge");
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("incomplete beta: a, b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_cf(a, b, x) / a;
    }
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, int dof) {
    if (dof < 1) throw ConfigError("student t: dof must be >= 1");
    const double v = static_cast<double>(dof);
    const double x = v / (v + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(v / 2.0, 0.5, x);
    return t >= 0.0 ? tail : 1.0 - tail;
}

} // namespace normdae::surv
