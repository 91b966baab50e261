#ifndef TCINET_TIMESERIES_HPP
#define TCINET_TIMESERIES_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcinet/errors.hpp"

namespace tcinet::ts {

enum class ColumnRole { treatment, outcome, covariate };

inline std::string role_name(ColumnRole r) {
    switch (r) {
    case ColumnRole::treatment: return "treatment";
    case ColumnRole::outcome: return "outcome";
    default: return "covariate";
    }
}

inline ColumnRole role_from_name(const std::string& s) {
    if (s == "treatment") return ColumnRole::treatment;
    if (s == "outcome") return ColumnRole::outcome;
    if (s == "covariate") return ColumnRole::covariate;
    throw ConfigError("unknown column role: " + s);
}

struct Column {
    std::string name;
    ColumnRole role = ColumnRole::covariate;
    std::vector<double> values;
};

/// Column-name to role mapping used when ingesting a CSV. The timestamp
/// column (`t` or `date`) is implicit and must not appear here.
using Schema = std::map<std::string, ColumnRole>;

namespace detail {

// Howard Hinnant's days-from-civil, via C++20 chrono.
inline long long days_from_iso_date(const std::string& s, std::size_t row) {
    int y, m, d;
    char dash1, dash2;
    std::istringstream in(s);
    if (!(in >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-' ||
        !in.eof() || m < 1 || m > 12 || d < 1 || d > 31) {
        throw DataError("row " + std::to_string(row) + ": bad ISO-8601 date '" + s + "'");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)},
                             day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) {
        throw DataError("row " + std::to_string(row) + ": invalid calendar date '" + s + "'");
    }
    return sys_days{ymd}.time_since_epoch().count();
}

inline std::string iso_date_from_days(long long days) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

/// Shortest decimal that round-trips a double exactly (17 significant digits).
inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

} // namespace detail

/// Aligned multivariate series. Timestamps are either plain integer steps or
/// calendar dates (stored as days since epoch); both are kept as a sortable
/// integer key. Exactly one treatment and one outcome column, any number of
/// covariates. Immutable by convention after construction.
struct TimeSeriesFrame {
    std::vector<long long> timestamps; // step index or days since 1970-01-01
    bool calendar = false;             // true when timestamps are dates
    std::vector<Column> columns;

    std::size_t size() const { return timestamps.size(); }

    const Column& column(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return c;
        throw SchemaError("no column named '" + name + "'");
    }

    int index_of_role(ColumnRole role) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i].role == role) return static_cast<int>(i);
        throw SchemaError("frame has no " + role_name(role) + " column");
    }

    const Column& treatment() const { return columns[index_of_role(ColumnRole::treatment)]; }
    const Column& outcome() const { return columns[index_of_role(ColumnRole::outcome)]; }

    std::vector<int> covariate_indices() const {
        std::vector<int> idx;
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i].role == ColumnRole::covariate) idx.push_back(static_cast<int>(i));
        return idx;
    }

    /// Input-feature column names in model layout: covariates in frame
    /// order, then the treatment last.
    std::vector<std::string> feature_names() const {
        std::vector<std::string> names;
        for (int i : covariate_indices()) names.push_back(columns[i].name);
        names.push_back(treatment().name);
        return names;
    }

    void validate() const {
        if (timestamps.empty()) throw DataError("frame is empty");
        int n_treat = 0, n_out = 0;
        for (const auto& c : columns) {
            if (c.values.size() != timestamps.size())
                throw ShapeError("column '" + c.name + "' length " +
                                 std::to_string(c.values.size()) + " != timestamp count " +
                                 std::to_string(timestamps.size()));
            if (c.role == ColumnRole::treatment) ++n_treat;
            if (c.role == ColumnRole::outcome) ++n_out;
            for (std::size_t r = 0; r < c.values.size(); ++r)
                if (!std::isfinite(c.values[r]))
                    throw DataError("non-finite value at row " + std::to_string(r) +
                                    ", column '" + c.name + "'");
        }
        if (n_treat != 1) throw SchemaError("frame needs exactly one treatment column, got " +
                                            std::to_string(n_treat));
        if (n_out != 1) throw SchemaError("frame needs exactly one outcome column, got " +
                                          std::to_string(n_out));
        for (std::size_t r = 1; r < timestamps.size(); ++r)
            if (timestamps[r] <= timestamps[r - 1])
                throw OrderingError("timestamps not strictly increasing at row " +
                                    std::to_string(r));
    }

    /// Rows [start, start+len).
    TimeSeriesFrame slice(std::size_t start, std::size_t len) const {
        if (start + len > size()) throw ShapeError("slice out of range");
        TimeSeriesFrame out;
        out.calendar = calendar;
        out.timestamps.assign(timestamps.begin() + start, timestamps.begin() + start + len);
        for (const auto& c : columns) {
            Column cc{c.name, c.role, {}};
            cc.values.assign(c.values.begin() + start, c.values.begin() + start + len);
            out.columns.push_back(std::move(cc));
        }
        return out;
    }
};

inline TimeSeriesFrame ingest_csv(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    if (header.empty()) throw SchemaError("'" + path + "' has an empty header");

    const std::string& ts_name = header.front();
    if (ts_name != "t" && ts_name != "date")
        throw SchemaError("first column must be 't' or 'date', got '" + ts_name + "'");

    TimeSeriesFrame frame;
    frame.calendar = (ts_name == "date");
    for (std::size_t i = 1; i < header.size(); ++i) {
        const auto it = schema.find(header[i]);
        if (it == schema.end())
            throw SchemaError("column '" + header[i] + "' missing from schema");
        frame.columns.push_back(Column{header[i], it->second, {}});
    }
    for (const auto& [name, role] : schema) {
        bool found = false;
        for (const auto& c : frame.columns) found = found || c.name == name;
        if (!found) throw SchemaError("schema column '" + name + "' not in '" + path + "'");
    }

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        if (frame.calendar) {
            frame.timestamps.push_back(detail::days_from_iso_date(cells[0], row));
        } else {
            try {
                std::size_t used = 0;
                const long long v = std::stoll(cells[0], &used);
                if (used != cells[0].size()) throw std::invalid_argument("trailing");
                frame.timestamps.push_back(v);
            } catch (const std::exception&) {
                throw DataError("row " + std::to_string(row) + ": bad integer timestamp '" +
                                cells[0] + "'");
            }
        }
        for (std::size_t c = 1; c < cells.size(); ++c) {
            double v = 0.0;
            try {
                std::size_t used = 0;
                v = std::stod(cells[c], &used);
                if (used != cells[c].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw DataError("row " + std::to_string(row) + ", column '" + header[c] +
                                "': cell '" + cells[c] + "' does not parse as a real");
            }
            if (!std::isfinite(v))
                throw DataError("row " + std::to_string(row) + ", column '" + header[c] +
                                "': non-finite value");
            frame.columns[c - 1].values.push_back(v);
        }
        ++row;
    }
    frame.validate();
    return frame;
}

inline void write_csv(const TimeSeriesFrame& frame, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << (frame.calendar ? "date" : "t");
    for (const auto& c : frame.columns) out << ',' << c.name;
    out << '\n';
    for (std::size_t r = 0; r < frame.size(); ++r) {
        if (frame.calendar)
            out << detail::iso_date_from_days(frame.timestamps[r]);
        else
            out << frame.timestamps[r];
        for (const auto& c : frame.columns) out << ',' << detail::format_value(c.values[r]);
        out << '\n';
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

/// First floor(train_fraction*N) rows become train, the rest test.
inline std::pair<TimeSeriesFrame, TimeSeriesFrame>
chronological_split(const TimeSeriesFrame& frame, double train_fraction) {
    if (frame.size() < 2) throw SplitError("need at least 2 rows to split");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw SplitError("train_fraction must be in (0,1)");
    const auto n = frame.size();
    const auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n)
        throw SplitError("train_fraction " + std::to_string(train_fraction) +
                         " leaves an empty partition for N=" + std::to_string(n));
    return {frame.slice(0, n_train), frame.slice(n_train, n - n_train)};
}

/// One training window: `input` is lag x (M+1), covariates in frame order
/// with the treatment in the last column; `target` is the outcome `horizon`
/// steps after the window's final row.
struct LaggedWindow {
    Eigen::MatrixXd input;
    double target = 0.0;
    double weight = 1.0;
    long long end_index = 0; // row index of the window's last input row
};

struct LaggedDataset {
    std::vector<LaggedWindow> windows;
    int lag = 0;
    int horizon = 0;
    int n_features = 0; // M+1
    std::vector<std::string> feature_names;
    std::string outcome_name;

    int treatment_column() const { return n_features - 1; }
    std::size_t size() const { return windows.size(); }
};

inline LaggedDataset make_lagged(const TimeSeriesFrame& frame, int lag, int horizon) {
    if (lag < 1) throw WindowError("lag must be >= 1");
    if (horizon < 1) throw WindowError("horizon must be >= 1");
    const auto n = static_cast<long long>(frame.size());
    if (n < lag + horizon)
        throw WindowError("frame length " + std::to_string(n) + " < lag+horizon " +
                          std::to_string(lag + horizon));

    const auto cov_idx = frame.covariate_indices();
    const int treat_idx = frame.index_of_role(ColumnRole::treatment);
    const int out_idx = frame.index_of_role(ColumnRole::outcome);
    const int m_plus_1 = static_cast<int>(cov_idx.size()) + 1;

    LaggedDataset ds;
    ds.lag = lag;
    ds.horizon = horizon;
    ds.n_features = m_plus_1;
    ds.feature_names = frame.feature_names();
    ds.outcome_name = frame.columns[out_idx].name;

    const long long n_windows = n - lag - horizon + 1;
    ds.windows.reserve(static_cast<std::size_t>(n_windows));
    for (long long k = 0; k < n_windows; ++k) {
        LaggedWindow w;
        w.input.resize(lag, m_plus_1);
        for (int r = 0; r < lag; ++r) {
            const auto row = static_cast<std::size_t>(k + r);
            int f = 0;
            for (int ci : cov_idx) w.input(r, f++) = frame.columns[ci].values[row];
            w.input(r, f) = frame.columns[treat_idx].values[row];
        }
        w.end_index = k + lag - 1;
        w.target = frame.columns[out_idx].values[static_cast<std::size_t>(k + lag + horizon - 1)];
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

struct ColumnStats {
    double mean = 0.0;
    double stddev = 1.0;
    bool constant = false; // stddev forced to 1
};

/// Per-column standardization. Uses the population denominator N so that a
/// transformed training column has standard deviation exactly 1.
class Standardizer {
public:
    Standardizer() = default;

    static Standardizer fit(const TimeSeriesFrame& frame) {
        Standardizer s;
        for (const auto& c : frame.columns) {
            const auto n = static_cast<double>(c.values.size());
            double mean = 0.0;
            for (double v : c.values) mean += v;
            mean /= n;
            double var = 0.0;
            for (double v : c.values) var += (v - mean) * (v - mean);
            var /= n;
            ColumnStats st;
            st.mean = mean;
            if (var > 0.0) {
                st.stddev = std::sqrt(var);
            } else {
                st.stddev = 1.0;
                st.constant = true;
            }
            s.names_.push_back(c.name);
            s.stats_.push_back(st);
        }
        return s;
    }

    const ColumnStats& stats_for(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return stats_[i];
        throw SchemaError("standardizer has no stats for column '" + name + "'");
    }

    bool has(const std::string& name) const {
        return std::find(names_.begin(), names_.end(), name) != names_.end();
    }

    TimeSeriesFrame transform(const TimeSeriesFrame& frame) const {
        TimeSeriesFrame out = frame;
        for (auto& c : out.columns) {
            const auto& st = stats_for(c.name);
            for (auto& v : c.values) v = (v - st.mean) / st.stddev;
        }
        return out;
    }

    TimeSeriesFrame inverse(const TimeSeriesFrame& frame) const {
        TimeSeriesFrame out = frame;
        for (auto& c : out.columns) {
            const auto& st = stats_for(c.name);
            for (auto& v : c.values) v = st.mean + st.stddev * v;
        }
        return out;
    }

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<ColumnStats>& stats() const { return stats_; }

private:
    std::vector<std::string> names_;
    std::vector<ColumnStats> stats_;
};

inline Standardizer fit_standardizer(const TimeSeriesFrame& frame) {
    return Standardizer::fit(frame);
}

/// Windows used to evaluate on the test partition. With context_bridge the
/// first test windows may reach back into the train tail for up to
/// lag+horizon-1 rows of context; by default the partitions stay disjoint.
/// `target_row_offset` maps a window's local target row to a row index in
/// the full frame.
struct EvalWindows {
    LaggedDataset dataset;
    long long target_row_offset = 0;
};

inline EvalWindows build_eval_windows(const TimeSeriesFrame& full, std::size_t n_train,
                                      int lag, int horizon, bool context_bridge) {
    const long long bridge = context_bridge ? (lag + horizon - 1) : 0;
    const long long start = static_cast<long long>(n_train) - bridge;
    if (start < 0) throw WindowError("train partition shorter than requested context bridge");
    EvalWindows ew;
    ew.dataset = make_lagged(full.slice(static_cast<std::size_t>(start),
                                        full.size() - static_cast<std::size_t>(start)),
                             lag, horizon);
    ew.target_row_offset = start;
    return ew;
}

} // namespace tcinet::ts

#endif
