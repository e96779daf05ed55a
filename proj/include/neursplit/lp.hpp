#pragma once

#include <cstddef>
#include <vector>

namespace neursplit::lp {

// maximize c'x  subject to  A x <= b,  x >= 0.  b may be negative.
struct Problem {
    std::size_t num_vars = 0;
    std::vector<std::vector<double>> rows;
    std::vector<double> rhs;
    std::vector<double> objective;

    void add_row(std::vector<double> coeffs, double bound);
};

enum class Status { Optimal, Infeasible, Unbounded };

struct Solution {
    Status status = Status::Infeasible;
    double objective = 0.0;
    std::vector<double> x;
    std::size_t pivots = 0;
};

// Dense two-phase tableau simplex with Bland's rule (no cycling).
Solution solve(const Problem& problem, double eps = 1e-9);

} // namespace neursplit::lp
