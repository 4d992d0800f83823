#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "tsguard/data.hpp"

using namespace tsguard;

namespace {

std::filesystem::path temp_csv(const std::string& name, const std::string& contents) {
    const auto dir = std::filesystem::temp_directory_path() / "tsguard_data_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream os(path);
    os << contents;
    return path;
}

StationSeries make_series(const std::string& id, std::vector<double> values) {
    StationSeries s;
    s.station_id = id;
    s.values = std::move(values);
    return s;
}

} // namespace

TEST_CASE("load_csv parses the schema") {
    const auto path = temp_csv("ok.csv", "station_id,hour_index,value\n"
                                         "a,0,1.5\na,1,2.5\na,2,3.5\n"
                                         "b,0,9\nb,1,8\nb,2,7\n");
    const auto series = load_csv(path);
    REQUIRE(series.size() == 2);
    CHECK(series[0].station_id == "a");
    CHECK(series[0].values == std::vector<double>{1.5, 2.5, 3.5});
    CHECK(series[1].values == std::vector<double>{9, 8, 7});
}

TEST_CASE("load_csv accepts any column order") {
    const auto path = temp_csv("reorder.csv", "value,station_id,hour_index\n1.5,a,0\n2.5,a,1\n");
    const auto series = load_csv(path);
    REQUIRE(series.size() == 1);
    CHECK(series[0].values == std::vector<double>{1.5, 2.5});
}

TEST_CASE("load_csv error contract") {
    SECTION("hour gap names the station and hour") {
        const auto path = temp_csv("gap.csv", "station_id,hour_index,value\na,0,1\na,2,3\n");
        try {
            load_csv(path);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("a") != std::string::npos);
            CHECK(msg.find("1") != std::string::npos);
        }
    }
    SECTION("duplicate row") {
        const auto path = temp_csv("dup.csv", "station_id,hour_index,value\na,0,1\na,0,2\n");
        CHECK_THROWS_AS(load_csv(path), ConfigError);
    }
    SECTION("missing column") {
        const auto path = temp_csv("missing.csv", "station_id,value\na,1\n");
        CHECK_THROWS_AS(load_csv(path), ConfigError);
    }
    SECTION("non-numeric value") {
        const auto path = temp_csv("nan.csv", "station_id,hour_index,value\na,0,abc\n");
        CHECK_THROWS_AS(load_csv(path), ConfigError);
    }
    SECTION("empty file") {
        const auto path = temp_csv("empty.csv", "");
        CHECK_THROWS_AS(load_csv(path), ConfigError);
        const auto headers_only = temp_csv("headers.csv", "station_id,hour_index,value\n");
        CHECK_THROWS_AS(load_csv(headers_only), ConfigError);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv"), PrerequisiteError);
    }
}

TEST_CASE("csv writing round-trips exactly") {
    SyntheticSpec spec;
    spec.stations = 3;
    spec.weeks = 2;
    spec.seed = 5;
    const auto series = generate_synthetic(spec);
    const auto path = std::filesystem::temp_directory_path() / "tsguard_data_test" / "rt.csv";
    std::filesystem::create_directories(path.parent_path());
    write_csv(series, path);
    const auto loaded = load_csv(path);
    REQUIRE(loaded.size() == series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        CHECK(loaded[i].station_id == series[i].station_id);
        CHECK(loaded[i].values == series[i].values); // shortest round-trip formatting is lossless
    }
}

TEST_CASE("synthetic generation") {
    SyntheticSpec spec;
    spec.stations = 100;
    spec.weeks = 8;
    spec.seed = 42;
    const auto series = generate_synthetic(spec);
    SECTION("dimensions") {
        CHECK(series.size() == 100);
        for (const auto& s : series) CHECK(s.values.size() == 1344); // 8*7*24
    }
    SECTION("same seed is bit-identical, different seed differs") {
        const auto again = generate_synthetic(spec);
        CHECK(again[0].values == series[0].values);
        CHECK(again[99].values == series[99].values);
        SyntheticSpec other = spec;
        other.seed = 43;
        CHECK(generate_synthetic(other)[0].values != series[0].values);
    }
    SECTION("values are nonnegative") {
        for (const auto& s : series)
            for (double v : s.values) CHECK(v >= 0.0);
    }
    SECTION("default noise scale hits the calibration band") {
        const double stat = mean_normalized_std(series);
        CHECK(stat > 0.21);
        CHECK(stat < 0.31);
    }
    SECTION("invalid sizes rejected") {
        CHECK_THROWS_AS(generate_synthetic({0, 8, 0.03, 1}), std::invalid_argument);
        CHECK_THROWS_AS(generate_synthetic({1, 1, 0.03, 1}), std::invalid_argument);
    }
}

TEST_CASE("normalization uses training statistics only") {
    StationSeries s = make_series("x", {2.0, 4.0, 6.0});
    const StationSeries n = normalize(s, 3);
    CHECK(n.values == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(n.norm_min == 2.0);
    CHECK(n.norm_max == 6.0);
    CHECK(n.normalized);

    // values beyond the training hours do not move the statistics and may
    // leave [0, 1] unclipped
    StationSeries longer = make_series("y", {2.0, 4.0, 6.0, 10.0});
    const StationSeries n2 = normalize(longer, 3);
    CHECK(n2.values[3] == 2.0);

    SECTION("constant training series is an error") {
        StationSeries flat = make_series("z", {3.0, 3.0, 3.0, 5.0});
        CHECK_THROWS_AS(normalize(flat, 3), ConfigError);
    }
    SECTION("round trip") {
        for (double v : {0.0, 0.3, 1.0, 1.7}) {
            CHECK(std::abs(denormalize(n, (denormalize(n, v) - n.norm_min) /
                                              (n.norm_max - n.norm_min)) -
                           denormalize(n, v)) < 1e-12);
        }
        CHECK(std::abs(denormalize(n, n.values[1]) - 4.0) < 1e-12);
    }
}

TEST_CASE("windowing index arithmetic") {
    SECTION("length 25 gives exactly one window") {
        std::vector<double> v(25);
        for (std::size_t i = 0; i < 25; ++i) v[i] = static_cast<double>(i);
        const WindowedDataset ds = window(make_series("s", v));
        REQUIRE(ds.rows() == 1);
        CHECK(ds.X.at2(0, 0) == 0.0);  // v[t-24]
        CHECK(ds.X.at2(0, 1) == 22.0); // v[t-2]
        CHECK(ds.X.at2(0, 2) == 23.0); // v[t-1]
        CHECK(ds.y.data[0] == 24.0);
        CHECK(ds.target_hour[0] == 24);
    }
    SECTION("length 24 is too short") {
        CHECK_THROWS_AS(window(make_series("s", std::vector<double>(24, 1.0))), ConfigError);
    }
    SECTION("a length-L series yields L-24 windows") {
        const WindowedDataset ds = window(make_series("s", std::vector<double>(100, 0.0)));
        CHECK(ds.rows() == 76);
    }
}

TEST_CASE("split partitions by target hour") {
    SyntheticSpec spec;
    spec.stations = 2;
    spec.weeks = 8;
    spec.seed = 9;
    auto series = generate_synthetic(spec);
    std::vector<StationSeries> normed;
    for (const auto& s : series) normed.push_back(normalize(s));
    const WindowedDataset all = window_all(normed);
    const auto [train, test] = split(all);

    CHECK(train.rows() + test.rows() == all.rows());
    for (std::size_t i = 0; i < train.rows(); ++i) CHECK(train.target_hour[i] < 1176);
    for (std::size_t i = 0; i < test.rows(); ++i) {
        CHECK(test.target_hour[i] >= 1176);
        CHECK(test.target_hour[i] < 1344);
    }
    // per-station test window count is one week of hours
    std::map<std::string, int> per_station;
    for (const auto& s : test.station) per_station[s]++;
    for (const auto& [id, count] : per_station) CHECK(count == 168);

    SECTION("insufficient span") {
        const WindowedDataset tiny = window(make_series("s", std::vector<double>(30, 0.5)));
        CHECK_THROWS_AS(split(tiny), ConfigError);
    }
}

TEST_CASE("no training window has its target in the test week") {
    SyntheticSpec spec;
    spec.stations = 1;
    spec.weeks = 8;
    spec.seed = 2;
    const auto splits = prepare_dataset(generate_synthetic(spec));
    for (std::size_t i = 0; i < splits.train.rows(); ++i)
        CHECK(splits.train.target_hour[i] < 7 * hours_per_week);
    CHECK(splits.test.rows() == 168);
}

TEST_CASE("station selection") {
    std::vector<StationSeries> all;
    for (int i = 0; i < 1000; ++i) all.push_back(make_series(std::to_string(i), {1.0}));

    SECTION("selecting everything is the identity") {
        const auto sel = select_stations(all, 1000, 7);
        REQUIRE(sel.size() == 1000);
        for (std::size_t i = 0; i < sel.size(); ++i) CHECK(sel[i].station_id == all[i].station_id);
    }
    SECTION("same seed, same subset") {
        const auto a = select_stations(all, 100, 7);
        const auto b = select_stations(all, 100, 7);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].station_id == b[i].station_id);
    }
    SECTION("different seeds give different subsets") {
        const auto a = select_stations(all, 100, 7);
        const auto b = select_stations(all, 100, 8);
        bool same = true;
        for (std::size_t i = 0; i < a.size(); ++i) same &= a[i].station_id == b[i].station_id;
        CHECK_FALSE(same);
    }
    SECTION("count too large") {
        CHECK_THROWS_AS(select_stations(all, 1001, 7), std::invalid_argument);
    }
}

TEST_CASE("windowing is pure") {
    SyntheticSpec spec;
    spec.stations = 1;
    spec.weeks = 2;
    spec.seed = 31;
    const auto series = generate_synthetic(spec);
    const WindowedDataset a = window(series[0]);
    const WindowedDataset b = window(series[0]);
    CHECK(bit_equal(a.X, b.X));
    CHECK(bit_equal(a.y, b.y));
}
