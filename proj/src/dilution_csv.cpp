#include "btdz/dilution_csv.hpp"

#include <cstdio>
#include <sstream>

namespace btdz {

std::string dilution_records_to_csv(const std::vector<DilutionCurveRecord>& records) {
    std::ostringstream out;
    out << "env,estimator,seed,d,trace,normalized_trace";
    for (int i = 1; i <= 10; ++i) out << ",eig" << i;
    out << "\n";
    char buf[40];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.12g", v);
        return std::string(buf);
    };
    for (const auto& rec : records) {
        for (const auto& report : rec.reports) {
            out << rec.env << ',' << rec.estimator << ',' << rec.seed << ',' << report.dim << ','
                << num(report.trace) << ',' << num(report.normalized_trace);
            for (int i = 0; i < 10; ++i)
                out << ',' << (i < report.eigenvalues.size() ? num(report.eigenvalues[i]) : "");
            out << "\n";
        }
    }
    return out.str();
}

} // namespace btdz
