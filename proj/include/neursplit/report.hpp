#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neursplit/device_sim.hpp"
#include "neursplit/io.hpp"

namespace neursplit {

inline constexpr std::string_view kBreakdownFormat = "neursplit-breakdowns/1";

// Columns of the latency CSV, in order:
//   label        breakdown name (no commas, quotes or newlines)
//   layer        layer index, or "total" for the per-breakdown totals row
//   inputs       number of simulated inputs
//   fast_s       FAST compute seconds summed over inputs
//   slow_s       SLOW compute seconds
//   sync_s       synchronization seconds
//   predict_s    predictor overhead seconds
//   total_s      end-to-end seconds (predict + max(fast, slow) + sync per layer and input)
//   fast_active  activated neurons computed on FAST
//   slow_active  activated neurons computed on SLOW
// Each breakdown contributes num_layers rows followed by its totals row.
std::span<const std::string_view> breakdown_columns();

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::string breakdowns_to_csv(std::span<const LatencyBreakdown> breakdowns);
json breakdowns_to_json(std::span<const LatencyBreakdown> breakdowns);
std::vector<LatencyBreakdown> breakdowns_from_json(const json& doc);

// Schema-checked conversions; the header must match breakdown_columns() exactly.
json csv_to_json(std::string_view csv);
std::string json_to_csv(const json& doc);

} // namespace neursplit
