#include "timepd/data.hpp"
#include "timepd/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace timepd;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("timepd_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path file(const std::string& name, const std::string& content) const {
        const fs::path p = path_ / name;
        std::ofstream(p) << content;
        return p;
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

RawSeries ramp_series(std::size_t length, std::size_t channels) {
    RawSeries s;
    s.values = Tensor(Shape{length, channels});
    for (std::size_t t = 0; t < length; ++t)
        for (std::size_t c = 0; c < channels; ++c) s.values[t * channels + c] = static_cast<double>(10 * t + c);
    for (std::size_t c = 0; c < channels; ++c) s.channel_names.push_back("c" + std::to_string(c));
    return s;
}

} // namespace

TEST(LoadCsv, SmallFile) {
    TempDir dir;
    auto s = load_csv(dir.file("a.csv", "a,b\n1,2\n3,4\n5,6\n"));
    EXPECT_EQ(s.values.shape(), (Shape{3, 2}));
    EXPECT_EQ(s.at(2, 1), 6.0);
    EXPECT_TRUE(s.timestamps.empty());
}

TEST(LoadCsv, EttHeaderGivesSevenChannels) {
    TempDir dir;
    auto s = load_csv(dir.file("ett.csv",
                               "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n"
                               "2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\n"
                               "2016-07-01 01:00:00,5.693,2.076,1.492,0.426,4.142,1.371,27.787\n"));
    EXPECT_EQ(s.channels(), 7u);
    EXPECT_EQ(s.channel_names.back(), "OT");
    EXPECT_EQ(s.timestamps.front(), "2016-07-01 00:00:00");
}

TEST(LoadCsv, NamedDateColumn) {
    TempDir dir;
    auto s = load_csv(dir.file("d.csv", "x,when\n1,monday\n2,tuesday\n"), std::string("when"));
    EXPECT_EQ(s.channels(), 1u);
    EXPECT_EQ(s.timestamps[1], "tuesday");
}

TEST(LoadCsv, NonNumericCellNamesRow) {
    TempDir dir;
    const auto p = dir.file("bad.csv", "a,b\n1,2\n3,4\n5,6\n7,8\n9,n/a\n11,12\n");
    try {
        load_csv(p);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 5"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos) << e.what();
    }
}

TEST(LoadCsv, EmptyAndMissing) {
    TempDir dir;
    EXPECT_THROW(load_csv(dir.file("empty.csv", "")), DataError);
    EXPECT_THROW(load_csv(dir.file("header_only.csv", "a,b\n")), DataError);
    EXPECT_THROW(load_csv(dir.path() / "nope.csv"), DataError);
}

TEST(LoadCsv, RoundTrip) {
    TempDir dir;
    auto s = synth_generate({.length = 50, .channels = 3, .trend_slopes = {0.1, -0.2, 0.3}, .noise_std = 0.5, .seed = 4});
    s.timestamps.assign(50, "t");
    write_csv(s, dir.path() / "rt.csv");
    auto back = load_csv(dir.path() / "rt.csv");
    EXPECT_EQ(back.values, s.values);
    EXPECT_EQ(back.channel_names, s.channel_names);
}

TEST(Split, SixTwoTwo) {
    auto r = split(100, {6, 2, 2});
    EXPECT_EQ(r[0], (RoleRange{0, 60}));
    EXPECT_EQ(r[1], (RoleRange{60, 80}));
    EXPECT_EQ(r[2], (RoleRange{80, 100}));
}

TEST(Split, SevenOneTwo) {
    auto r = split(100, {0.7, 0.1, 0.2});
    EXPECT_EQ(r[0], (RoleRange{0, 70}));
    EXPECT_EQ(r[1], (RoleRange{70, 80}));
    EXPECT_EQ(r[2], (RoleRange{80, 100}));
}

TEST(Split, TenRows) {
    auto r = split(10, {0.6, 0.2, 0.2});
    EXPECT_EQ(r[0], (RoleRange{0, 6}));
    EXPECT_EQ(r[1], (RoleRange{6, 8}));
    EXPECT_EQ(r[2], (RoleRange{8, 10}));
}

TEST(Split, ZeroLengthPartIsAnError) {
    EXPECT_THROW(split(3, {6, 2, 2}), DataError);
    EXPECT_THROW(split(100, {1, 0, 1}), DataError);
}

TEST(MakeWindows, Counts) {
    auto s = ramp_series(10, 1);
    auto norm = Normalizer{{0.0}, {1.0}};
    EXPECT_EQ(make_windows(s, 4, 2, {0, 10}, norm, Role::train).size(), 5u);
    auto one = make_windows(s, 4, 2, {0, 6}, norm, Role::train);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one.x(0), Tensor(Shape{4, 1}, {0, 10, 20, 30}));
    EXPECT_EQ(one.y(0), Tensor(Shape{2, 1}, {40, 50}));
    EXPECT_THROW(make_windows(s, 4, 2, {0, 5}, norm, Role::train), DataError);
}

TEST(MakeWindows, StayInsideRoleRange) {
    auto s = ramp_series(40, 2);
    auto norm = Normalizer{{0.0, 0.0}, {1.0, 1.0}};
    auto d = make_windows(s, 5, 3, {20, 32}, norm, Role::val);
    ASSERT_EQ(d.size(), 5u);
    EXPECT_EQ(d.x(0)[0], 200.0);                  // row 20, channel 0
    EXPECT_EQ(d.y(d.size() - 1).data().back(), 311.0);  // row 31, channel 1
}

TEST(MakeWindows, ConsecutiveWindowsShiftByOneStep) {
    auto d = build_domain(synth_generate({.length = 200, .channels = 2, .trend_slopes = {0.01}, .noise_std = 0.3, .seed = 9}),
                          12, 4, {6, 2, 2});
    for (std::size_t i = 0; i + 1 < d.train.size(); ++i) {
        const Tensor a = d.train.x(i);
        const Tensor b = d.train.x(i + 1);
        for (std::size_t k = 2; k < a.size(); ++k) ASSERT_EQ(a[k], b[k - 2]);
    }
}

TEST(Normalizer, UsesTrainStatisticsAndInverts) {
    auto raw = synth_generate({.length = 300, .channels = 3, .trend_slopes = {0.05, 0.0, -0.02}, .noise_std = 0.2, .seed = 2});
    auto d = build_domain(raw, 24, 8, {6, 2, 2});
    auto ref = Normalizer::fit(raw, {0, 180});
    EXPECT_EQ(d.normalizer.mean, ref.mean);
    const Tensor back = d.normalizer.denormalize(d.test.x(3));
    for (std::size_t k = 0; k < back.size(); ++k) {
        const std::size_t t = 240 + 3 + k / 3;
        EXPECT_NEAR(back[k], raw.at(t, k % 3), 1e-9);
    }
}

TEST(Normalizer, ConstantChannelGetsUnitStd) {
    RawSeries s;
    s.values = Tensor(Shape{4, 1}, {2, 2, 2, 2});
    s.channel_names = {"flat"};
    auto n = Normalizer::fit(s, {0, 4});
    EXPECT_EQ(n.stddev[0], 1.0);
}

TEST(Subsample, PrefixFraction) {
    auto raw = ramp_series(105, 1);
    auto d = make_windows(raw, 4, 2, {0, 105}, Normalizer{{0.0}, {1.0}}, Role::train);
    ASSERT_EQ(d.size(), 100u);
    auto thirty = subsample_target(d, 0.3, 0);
    ASSERT_EQ(thirty.size(), 30u);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(thirty.window_id(i), i);
    EXPECT_EQ(subsample_target(d, 0.05, 0).size(), 5u);
    auto full = subsample_target(d, 1.0, 0);
    EXPECT_EQ(full.window_ids(), d.window_ids());
    EXPECT_EQ(full.all().x, d.all().x);
    EXPECT_THROW(subsample_target(d, 0.0, 0), DataError);
    EXPECT_THROW(subsample_target(d, 1.5, 0), DataError);
}

TEST(Subsample, RandomModeIsSeededAndSorted) {
    auto d = make_windows(ramp_series(105, 1), 4, 2, {0, 105}, Normalizer{{0.0}, {1.0}}, Role::train);
    auto a = subsample_target(d, 0.2, 11, true);
    auto b = subsample_target(d, 0.2, 11, true);
    EXPECT_EQ(a.window_ids(), b.window_ids());
    EXPECT_EQ(a.size(), 20u);
    EXPECT_TRUE(std::is_sorted(a.window_ids().begin(), a.window_ids().end()));
}

TEST(Synth, SineSamples) {
    auto s = synth_generate({.length = 4, .channels = 1, .trend_slopes = {0.0}, .season_period = 4, .season_amplitude = 1.0});
    const double expected[] = {0, 1, 0, -1};
    for (int t = 0; t < 4; ++t) EXPECT_NEAR(s.values[t], expected[t], 1e-12);
}

TEST(Synth, PureRamp) {
    auto s = synth_generate({.length = 6, .channels = 1, .trend_slopes = {1.0}, .season_amplitude = 0.0});
    for (int t = 0; t < 6; ++t) EXPECT_EQ(s.values[t], t);
}

TEST(Synth, SeededAndValidated) {
    SynthSpec spec{.length = 64, .channels = 2, .noise_std = 1.0, .seed = 5};
    EXPECT_EQ(synth_generate(spec).values, synth_generate(spec).values);
    spec.seed = 6;
    EXPECT_NE(synth_generate(spec).values, synth_generate(SynthSpec{.length = 64, .channels = 2, .noise_std = 1.0, .seed = 5}).values);
    EXPECT_THROW(synth_generate({.length = 4, .season_period = 1.0}), DataError);
    EXPECT_THROW(synth_generate({.length = 4, .noise_std = -1.0}), DataError);
}

TEST(SynthRegimes, ContinuousPiecewiseTrend) {
    auto s = synth_regimes({.channels = 2, .season_amplitude = 0.0}, {1.0, -2.0, 0.5}, 4);
    ASSERT_EQ(s.length(), 12u);
    const std::vector<double> expect = {0, 1, 2, 3, 4, 2, 0, -2, -4, -3.5, -3, -2.5};
    for (std::size_t t = 0; t < 12; ++t) {
        EXPECT_EQ(s.at(t, 0), expect[t]) << t;
        EXPECT_EQ(s.at(t, 1), expect[t]) << t;
    }
    EXPECT_THROW(synth_regimes({.channels = 1}, {}, 4), DataError);
}
