#pragma once

#include "jmp/errors.hpp"
#include "jmp/kernel.hpp"
#include "jmp/simulator.hpp"

#include <json.hpp>

#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace jmp {

inline constexpr const char* tool_version = "0.1.0";
inline constexpr int path_schema_version = 1;

/// FNV-1a, 64 bit. Used to stamp outputs with the hash of the canonical config.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// Kernel CSV: '#'-prefixed metadata lines, a header row, then one row per
/// starting state with the defect in the last column.
inline void write_kernel_csv(std::ostream& os, const Kernel& k,
                             const std::vector<std::pair<std::string, std::string>>& meta) {
    os << "# jmpkit " << tool_version << "\n";
    for (const auto& [key, value] : meta) os << "# " << key << "=" << value << "\n";
    os << "# u=" << format_double(k.u) << "\n# t=" << format_double(k.t) << "\n";
    os << "state";
    for (Eigen::Index j = 0; j < k.cols(); ++j) os << ",p" << j;
    os << ",defect\n";
    const Vector d = k.defect();
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
        os << i;
        for (Eigen::Index j = 0; j < k.cols(); ++j) os << "," << format_double(k.matrix(i, j));
        os << "," << format_double(d[i]) << "\n";
    }
}

/// Reads back the numeric body of write_kernel_csv (metadata lines skipped).
inline Matrix read_kernel_csv(std::istream& is, Vector* defect = nullptr) {
    std::string line;
    std::vector<std::vector<double>> rows;
    bool header = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        std::getline(ss, cell, ',');
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ConfigError("", "kernel CSV has no rows");
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto m = static_cast<Eigen::Index>(rows.front().size()) - 1;
    Matrix out(n, m);
    if (defect) defect->resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (defect) (*defect)[i] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)];
    }
    return out;
}

/// Empirical kernel CSV: per row the observation count, frequencies, the
/// explosion frequency, then z-sigma binomial half-widths for each column.
inline void write_empirical_csv(std::ostream& os, const EmpiricalKernel& ek, double z,
                                const std::vector<std::pair<std::string, std::string>>& meta) {
    os << "# jmpkit " << tool_version << "\n";
    for (const auto& [key, value] : meta) os << "# " << key << "=" << value << "\n";
    os << "# u=" << format_double(ek.kernel.u) << "\n# t=" << format_double(ek.kernel.t) << "\n# z=" << z << "\n";
    const auto n = ek.kernel.cols();
    os << "state,n_obs";
    for (Eigen::Index j = 0; j < n; ++j) os << ",p" << j;
    os << ",defect";
    for (Eigen::Index j = 0; j < n; ++j) os << ",hw" << j;
    os << ",hw_defect\n";
    for (Eigen::Index i = 0; i < ek.kernel.rows(); ++i) {
        os << i << "," << ek.counts[static_cast<std::size_t>(i)];
        if (ek.counts[static_cast<std::size_t>(i)] == 0) {
            for (Eigen::Index j = 0; j < 2 * n + 2; ++j) os << ",nan";
            os << "\n";
            continue;
        }
        for (Eigen::Index j = 0; j < n; ++j) os << "," << format_double(ek.kernel.matrix(i, j));
        os << "," << format_double(ek.defect[i]);
        for (Eigen::Index j = 0; j < n; ++j) os << "," << format_double(z * ek.std_error(i, j));
        os << "," << format_double(z * ek.defect_std_error[i]) << "\n";
    }
}

// Path dump: JSON lines. The first record is a header
//   {"schema":"jmpkit.paths","version":1,"tool":..., "seed":..., "config_hash":..., ...}
// followed by one record per path
//   {"index":i,"x0":x,"termination":"horizon_reached","events":[[t1,x1],[t2,x2],...]}

inline nlohmann::json path_to_json(const PathSample& p) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : p.events) ev.push_back({e.time, e.state});
    return {{"index", p.index}, {"x0", p.x0}, {"termination", to_string(p.termination)}, {"events", std::move(ev)}};
}

inline void write_path_dump(std::ostream& os, const SimulationConfig& cfg, const std::string& config_hash,
                            std::span<const PathSample> paths) {
    nlohmann::json header{{"schema", "jmpkit.paths"},
                          {"version", path_schema_version},
                          {"tool", tool_version},
                          {"seed", cfg.seed},
                          {"config_hash", config_hash},
                          {"n_paths", cfg.n_paths},
                          {"start_time", cfg.start_time},
                          {"horizon", cfg.horizon},
                          {"jump_cap", cfg.jump_cap}};
    os << header.dump() << "\n";
    for (const auto& p : paths) os << path_to_json(p).dump() << "\n";
}

inline std::vector<PathSample> read_path_dump(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("", "empty path dump");
    const auto header = nlohmann::json::parse(line);
    if (header.value("schema", "") != "jmpkit.paths") throw ConfigError("/schema", "not a jmpkit path dump");
    if (header.value("version", 0) != path_schema_version)
        throw ConfigError("/version", "unsupported path dump version");
    const double start = header.at("start_time").get<double>();
    const double horizon = header.at("horizon").get<double>();
    std::vector<PathSample> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        PathSample p;
        p.index = j.at("index").get<std::uint64_t>();
        p.x0 = j.at("x0").get<State>();
        p.start = start;
        p.horizon = horizon;
        const auto term = j.at("termination").get<std::string>();
        p.termination = term == "absorbed"            ? Termination::absorbed
                        : term == "explosion_cap_hit" ? Termination::explosion_cap_hit
                                                      : Termination::horizon_reached;
        for (const auto& e : j.at("events")) p.events.push_back({e.at(0).get<double>(), e.at(1).get<State>()});
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace jmp
