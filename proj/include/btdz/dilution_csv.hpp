#pragma once

#include <string>
#include <vector>

#include "btdz/spectrum.hpp"

namespace btdz {

struct DilutionCurveRecord {
    std::string env;
    std::string estimator; // "policies" | "subtrajectories"
    std::uint64_t seed = 0;
    std::vector<SpectrumReport> reports;
};

/// CSV with one row per (env, estimator, seed, d): trace, normalized trace and
/// the top ten eigenvalues.
std::string dilution_records_to_csv(const std::vector<DilutionCurveRecord>& records);

} // namespace btdz
