#include "neursplit/lp.hpp"

#include <cmath>
#include <utility>

#include "neursplit/error.hpp"

namespace neursplit::lp {

void Problem::add_row(std::vector<double> coeffs, double bound) {
    require(coeffs.size() == num_vars, "lp: row width does not match num_vars");
    rows.push_back(std::move(coeffs));
    rhs.push_back(bound);
}

namespace {

// Tableau layout: rows [0, m) are constraints, row m the phase-2 objective,
// row m+1 the phase-1 objective. Column n holds the auxiliary variable used
// to find a feasible basis; column n+1 is the right-hand side. Objective rows
// store negated reduced costs, so a negative entry means "can improve".
class Tableau {
public:
    Tableau(const Problem& p, double eps)
        : m_(p.rows.size()), n_(p.num_vars), eps_(eps), basis_(m_), nonbasis_(n_ + 1),
          t_(m_ + 2, std::vector<double>(n_ + 2, 0.0)) {
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) t_[i][j] = p.rows[i][j];
            t_[i][n_] = -1.0;
            t_[i][n_ + 1] = p.rhs[i];
            basis_[i] = static_cast<long>(n_ + i);
        }
        for (std::size_t j = 0; j < n_; ++j) {
            nonbasis_[j] = static_cast<long>(j);
            t_[m_][j] = -p.objective[j];
        }
        nonbasis_[n_] = kAux;
        t_[m_ + 1][n_] = 1.0;
    }

    Solution run() {
        Solution out;
        std::size_t worst = 0;
        for (std::size_t i = 1; i < m_; ++i) {
            if (t_[i][n_ + 1] < t_[worst][n_ + 1]) worst = i;
        }
        if (m_ > 0 && t_[worst][n_ + 1] < -eps_) {
            pivot(worst, n_);
            if (!optimize(m_ + 1, true) || t_[m_ + 1][n_ + 1] < -eps_) {
                out.status = Status::Infeasible;
                out.pivots = pivots_;
                return out;
            }
            // Drive the auxiliary variable out of the basis if it is still there.
            for (std::size_t i = 0; i < m_; ++i) {
                if (basis_[i] != kAux) continue;
                std::size_t s = 0;
                for (std::size_t j = 1; j <= n_; ++j) {
                    if (std::abs(t_[i][j]) > std::abs(t_[i][s]) + eps_) s = j;
                }
                // An all-zero row is redundant; the auxiliary stays basic at zero.
                if (std::abs(t_[i][s]) > eps_) pivot(i, s);
            }
        }
        if (!optimize(m_, false)) {
            out.status = Status::Unbounded;
            out.pivots = pivots_;
            return out;
        }
        out.status = Status::Optimal;
        out.x.assign(n_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            if (basis_[i] >= 0 && static_cast<std::size_t>(basis_[i]) < n_) out.x[basis_[i]] = t_[i][n_ + 1];
        }
        out.objective = t_[m_][n_ + 1];
        out.pivots = pivots_;
        return out;
    }

private:
    static constexpr long kAux = -1;

    void pivot(std::size_t r, std::size_t s) {
        ++pivots_;
        const double inv = 1.0 / t_[r][s];
        for (std::size_t i = 0; i < m_ + 2; ++i) {
            if (i == r || std::abs(t_[i][s]) <= 0.0) continue;
            const double f = t_[i][s] * inv;
            for (std::size_t j = 0; j < n_ + 2; ++j) t_[i][j] -= t_[r][j] * f;
            t_[i][s] = -f;
        }
        for (std::size_t j = 0; j < n_ + 2; ++j) t_[r][j] *= inv;
        t_[r][s] = inv;
        std::swap(basis_[r], nonbasis_[s]);
    }

    // Bland's rule: entering = lowest-labelled improving column, leaving =
    // min ratio with ties broken by lowest basic label.
    bool optimize(std::size_t obj_row, bool phase_one) {
        while (true) {
            std::size_t s = n_ + 1;
            for (std::size_t j = 0; j <= n_; ++j) {
                if (!phase_one && nonbasis_[j] == kAux) continue;
                if (t_[obj_row][j] < -eps_ && (s == n_ + 1 || nonbasis_[j] < nonbasis_[s])) s = j;
            }
            if (s == n_ + 1) return true;
            std::size_t r = m_;
            double best = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                if (t_[i][s] <= eps_) continue;
                const double ratio = t_[i][n_ + 1] / t_[i][s];
                if (r == m_ || ratio < best - eps_ || (ratio <= best + eps_ && basis_[i] < basis_[r])) {
                    r = i;
                    best = ratio;
                }
            }
            if (r == m_) return false;
            pivot(r, s);
        }
    }

    std::size_t m_;
    std::size_t n_;
    double eps_;
    std::vector<long> basis_;
    std::vector<long> nonbasis_;
    std::vector<std::vector<double>> t_;
    std::size_t pivots_ = 0;
};

} // namespace

Solution solve(const Problem& problem, double eps) {
    require(problem.objective.size() == problem.num_vars, "lp: objective width does not match num_vars");
    require(problem.rows.size() == problem.rhs.size(), "lp: rows/rhs size mismatch");
    return Tableau(problem, eps).run();
}

} // namespace neursplit::lp
