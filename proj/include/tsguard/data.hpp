#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsguard/errors.hpp"
#include "tsguard/rng.hpp"
#include "tsguard/tensor.hpp"

namespace tsguard {

constexpr std::int64_t hours_per_week = 168;

/// One base station's hourly traffic. Values are raw until normalize() maps
/// them to [0,1] using training-portion statistics (kept for invertibility).
struct StationSeries {
    std::string station_id;
    std::int64_t first_hour = 0;
    std::vector<double> values;
    double norm_min = 0.0;
    double norm_max = 1.0;
    bool normalized = false;
};

/// Windowed supervised pairs, stored struct-of-arrays: row i is the window
/// X[i] = (v[t-24], v[t-2], v[t-1]) with target y[i] = v[t] at absolute hour
/// target_hour[i] of station[i].
struct WindowedDataset {
    Tensor X; // m x n
    Tensor y; // m
    std::vector<std::string> station;
    std::vector<std::int64_t> target_hour;

    std::size_t rows() const { return station.size(); }
    std::size_t steps() const { return X.rank() == 2 ? X.shape[1] : 0; }

    WindowedDataset rows_slice(std::size_t start, std::size_t count) const {
        WindowedDataset out;
        out.X = X.rows(start, count);
        out.y = y.rows(start, count);
        out.station.assign(station.begin() + static_cast<std::ptrdiff_t>(start),
                           station.begin() + static_cast<std::ptrdiff_t>(start + count));
        out.target_hour.assign(target_hour.begin() + static_cast<std::ptrdiff_t>(start),
                               target_hour.begin() + static_cast<std::ptrdiff_t>(start + count));
        return out;
    }

    void append(const WindowedDataset& other) {
        if (rows() == 0) {
            *this = other;
            return;
        }
        if (other.rows() == 0) return;
        if (steps() != other.steps()) throw ShapeError("WindowedDataset::append: width mismatch");
        X.data.insert(X.data.end(), other.X.data.begin(), other.X.data.end());
        X.shape[0] += other.X.shape[0];
        y.data.insert(y.data.end(), other.y.data.begin(), other.y.data.end());
        y.shape[0] += other.y.shape[0];
        station.insert(station.end(), other.station.begin(), other.station.end());
        target_hour.insert(target_hour.end(), other.target_hour.begin(), other.target_hour.end());
    }
};

// --------------------------------------------------------------------------
// CSV ingestion  (schema: header `station_id,hour_index,value`)
// --------------------------------------------------------------------------

namespace detail {

inline double parse_value(const std::string& field, const std::string& context) {
    double out = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("non-numeric value in CSV: '" + field + "' (" + context + ")");
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

inline std::vector<StationSeries> load_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw PrerequisiteError("missing dataset file: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty CSV file: " + path.string());
    const std::vector<std::string> header = detail::split_csv_line(line);
    int col_station = -1, col_hour = -1, col_value = -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        if (header[i] == "station_id") col_station = i;
        else if (header[i] == "hour_index") col_hour = i;
        else if (header[i] == "value") col_value = i;
    }
    if (col_station < 0 || col_hour < 0 || col_value < 0)
        throw ConfigError("CSV header must contain station_id, hour_index, value: " + path.string());

    std::vector<std::string> order;                       // first-appearance station order
    std::map<std::string, std::map<std::int64_t, double>> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_csv_line(line);
        if (static_cast<int>(fields.size()) <= std::max({col_station, col_hour, col_value}))
            throw ConfigError("short CSV row at line " + std::to_string(line_no));
        const std::string& id = fields[static_cast<std::size_t>(col_station)];
        const std::string context = "station " + id + ", line " + std::to_string(line_no);
        const auto hour = static_cast<std::int64_t>(
            detail::parse_value(fields[static_cast<std::size_t>(col_hour)], context));
        const double value = detail::parse_value(fields[static_cast<std::size_t>(col_value)], context);
        auto [it, is_new] = rows.try_emplace(id);
        if (is_new) order.push_back(id);
        if (!it->second.emplace(hour, value).second)
            throw ConfigError("duplicate (station, hour) row: station " + id + ", hour " +
                              std::to_string(hour));
    }
    if (rows.empty()) throw ConfigError("CSV has no data rows: " + path.string());

    std::vector<StationSeries> out;
    for (const std::string& id : order) {
        const auto& hours = rows[id];
        StationSeries s;
        s.station_id = id;
        s.first_hour = hours.begin()->first;
        std::int64_t expected = s.first_hour;
        for (const auto& [hour, value] : hours) {
            if (hour != expected)
                throw ConfigError("non-contiguous hours for station " + id + ": expected hour " +
                                  std::to_string(expected) + ", found " + std::to_string(hour));
            s.values.push_back(value);
            ++expected;
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_csv(const std::vector<StationSeries>& series, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw PrerequisiteError("cannot open for writing: " + path.string());
    os << "station_id,hour_index,value\n";
    char buf[64];
    for (const StationSeries& s : series) {
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), s.values[i]);
            os << s.station_id << ',' << (s.first_hour + static_cast<std::int64_t>(i)) << ','
               << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << '\n';
        }
    }
    if (!os) throw PrerequisiteError("write failed: " + path.string());
}

// --------------------------------------------------------------------------
// synthetic data
// --------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t stations = 100;
    int weeks = 8;
    double noise_scale = 0.03; // calibrated so mean normalized std lands near 0.26
    std::uint64_t seed = 0;
};

/// Station-specific baseline + peaked daily bump + weekly modulation + seeded
/// Gaussian noise. Values stay nonnegative.
inline std::vector<StationSeries> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.stations < 1 || spec.weeks < 2)
        throw std::invalid_argument("generate_synthetic: needs >= 1 station and >= 2 weeks");
    const auto hours = static_cast<std::size_t>(spec.weeks * hours_per_week);
    Rng rng(spec.seed);
    std::vector<StationSeries> out;
    out.reserve(spec.stations);
    constexpr double two_pi = 6.283185307179586476925286766559;
    for (std::size_t s = 0; s < spec.stations; ++s) {
        const double base = rng.uniform(0.5, 2.0);
        const double amp = rng.uniform(1.0, 3.0);
        const double peak_hour = rng.uniform(8.0, 20.0);
        const double kappa = rng.uniform(1.0, 2.5);     // daily bump sharpness
        const double weekly_amp = rng.uniform(0.1, 0.35);
        const double weekly_phase = rng.uniform(0.0, 168.0);
        StationSeries series;
        series.station_id = std::to_string(s);
        series.values.reserve(hours);
        for (std::size_t t = 0; t < hours; ++t) {
            const double td = static_cast<double>(t);
            const double daily =
                std::exp(kappa * (std::cos(two_pi * (td - peak_hour) / 24.0) - 1.0));
            const double weekly = 1.0 + weekly_amp * std::cos(two_pi * (td - weekly_phase) / 168.0);
            const double noise = spec.noise_scale * amp * rng.normal();
            series.values.push_back(std::max(base + amp * daily * weekly + noise, 0.0));
        }
        out.push_back(std::move(series));
    }
    return out;
}

// --------------------------------------------------------------------------
// normalization / windowing / splitting
// --------------------------------------------------------------------------

/// Min-max normalization with statistics from the training hours only
/// (absolute hours below train_hours). Test values may leave [0,1]; they are
/// not clipped.
inline StationSeries normalize(const StationSeries& s, std::int64_t train_hours = 7 * hours_per_week) {
    if (s.values.empty()) throw ConfigError("normalize: empty series " + s.station_id);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (s.first_hour + static_cast<std::int64_t>(i) >= train_hours) break;
        lo = std::min(lo, s.values[i]);
        hi = std::max(hi, s.values[i]);
    }
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw ConfigError("normalize: station " + s.station_id + " has no training hours");
    if (hi == lo)
        throw ConfigError("normalize: constant training series for station " + s.station_id);
    StationSeries out = s;
    for (double& v : out.values) v = (v - lo) / (hi - lo);
    out.norm_min = lo;
    out.norm_max = hi;
    out.normalized = true;
    return out;
}

inline double denormalize(const StationSeries& s, double v) {
    return s.norm_min + v * (s.norm_max - s.norm_min);
}

/// One entry per target index t in [max(offsets), len): X holds
/// v[t - offsets[j]] in the given (oldest-first) order, y holds v[t].
inline WindowedDataset window(const StationSeries& s,
                              const std::vector<std::int64_t>& offsets = {24, 2, 1}) {
    if (offsets.empty()) throw std::invalid_argument("window: offsets must be nonempty");
    const std::int64_t max_off = *std::max_element(offsets.begin(), offsets.end());
    const auto len = static_cast<std::int64_t>(s.values.size());
    if (len <= max_off)
        throw ConfigError("window: series for station " + s.station_id + " too short (" +
                          std::to_string(len) + " <= " + std::to_string(max_off) + ")");
    const std::size_t n = offsets.size();
    const auto m = static_cast<std::size_t>(len - max_off);
    WindowedDataset out;
    out.X = Tensor({m, n});
    out.y = Tensor({m});
    out.station.assign(m, s.station_id);
    out.target_hour.resize(m);
    for (std::int64_t t = max_off; t < len; ++t) {
        const auto row = static_cast<std::size_t>(t - max_off);
        for (std::size_t j = 0; j < n; ++j)
            out.X.at2(row, j) = s.values[static_cast<std::size_t>(t - offsets[j])];
        out.y.data[row] = s.values[static_cast<std::size_t>(t)];
        out.target_hour[row] = s.first_hour + t;
    }
    return out;
}

inline WindowedDataset window_all(const std::vector<StationSeries>& series,
                                  const std::vector<std::int64_t>& offsets = {24, 2, 1}) {
    WindowedDataset out;
    for (const StationSeries& s : series) out.append(window(s, offsets));
    return out;
}

/// Partition by target hour: the first train_weeks weeks train, the following
/// test_weeks weeks test. Windows may read input hours across the boundary;
/// targets beyond the covered span are dropped.
inline std::pair<WindowedDataset, WindowedDataset> split(const WindowedDataset& ds,
                                                         int train_weeks = 7, int test_weeks = 1) {
    if (train_weeks < 1 || test_weeks < 1)
        throw std::invalid_argument("split: week counts must be positive");
    const std::int64_t train_end = train_weeks * hours_per_week;
    const std::int64_t test_end = train_end + test_weeks * hours_per_week;
    const std::size_t n = ds.steps();
    WindowedDataset train, test;
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        if (ds.target_hour[i] < train_end) train_rows.push_back(i);
        else if (ds.target_hour[i] < test_end) test_rows.push_back(i);
    }
    auto gather = [&](const std::vector<std::size_t>& idx) {
        WindowedDataset out;
        out.X = Tensor({idx.size(), n});
        out.y = Tensor({idx.size()});
        out.station.reserve(idx.size());
        out.target_hour.reserve(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t j = 0; j < n; ++j) out.X.at2(r, j) = ds.X.at2(idx[r], j);
            out.y.data[r] = ds.y.data[idx[r]];
            out.station.push_back(ds.station[idx[r]]);
            out.target_hour.push_back(ds.target_hour[idx[r]]);
        }
        return out;
    };
    if (test_rows.empty())
        throw ConfigError("split: no windows fall in the test weeks; series span too short");
    return {gather(train_rows), gather(test_rows)};
}

/// Uniform sample of `count` stations without replacement, reproducible from
/// the seed; output keeps the input's relative order.
inline std::vector<StationSeries> select_stations(const std::vector<StationSeries>& all,
                                                  std::size_t count, std::uint64_t seed) {
    if (count > all.size()) throw std::invalid_argument("select_stations: count exceeds available");
    Rng rng(seed);
    std::vector<StationSeries> out;
    out.reserve(count);
    for (std::size_t i : rng.sample_indices(all.size(), count)) out.push_back(all[i]);
    return out;
}

/// Mean over stations of the standard deviation of the normalized series;
/// the calibration statistic for the synthetic generator.
inline double mean_normalized_std(const std::vector<StationSeries>& series,
                                  std::int64_t train_hours = 7 * hours_per_week) {
    if (series.empty()) throw std::invalid_argument("mean_normalized_std: no series");
    double acc = 0.0;
    for (const StationSeries& raw : series) {
        const StationSeries s = raw.normalized ? raw : normalize(raw, train_hours);
        double mean = 0.0;
        for (double v : s.values) mean += v;
        mean /= static_cast<double>(s.values.size());
        double var = 0.0;
        for (double v : s.values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(s.values.size());
        acc += std::sqrt(var);
    }
    return acc / static_cast<double>(series.size());
}

struct DatasetSplits {
    WindowedDataset train;
    WindowedDataset test;
};

/// normalize (train-only statistics) -> window -> split, the standard data path.
inline DatasetSplits prepare_dataset(const std::vector<StationSeries>& raw, int train_weeks = 7,
                                     int test_weeks = 1) {
    std::vector<StationSeries> normed;
    normed.reserve(raw.size());
    for (const StationSeries& s : raw) normed.push_back(normalize(s, train_weeks * hours_per_week));
    auto [train, test] = split(window_all(normed), train_weeks, test_weeks);
    return {std::move(train), std::move(test)};
}

} // namespace tsguard
