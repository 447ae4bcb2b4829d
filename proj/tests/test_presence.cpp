#include <random>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "stungage/presence.hpp"
#include "stungage/synth.hpp"

using namespace stungage;

namespace {

Histogram random_histogram(std::mt19937_64& rng, int bins, bool allow_zero) {
  Histogram h;
  h.counts.resize(static_cast<std::size_t>(bins));
  for (auto& c : h.counts) {
    c = rng() % 1000;
    if (allow_zero && rng() % 4 == 0) c = 0;
    h.total += c;
  }
  if (h.total == 0) {
    h.counts[0] = 1;
    h.total = 1;
  }
  return h;
}

}  // namespace

TEST(Histogram, BinsAndTotal) {
  GrayImage img(4, 2);
  const std::array<std::uint8_t, 8> v{0, 7, 8, 15, 16, 127, 128, 255};
  std::copy(v.begin(), v.end(), img.pixels().begin());
  const auto h = build_scaled_histogram(img, 32);
  EXPECT_EQ(h.bins(), 32);
  EXPECT_EQ(h.total, 8u);
  EXPECT_EQ(h.counts[0], 2u);
  EXPECT_EQ(h.counts[1], 2u);
  EXPECT_EQ(h.counts[2], 1u);
  EXPECT_EQ(h.counts[15], 1u);
  EXPECT_EQ(h.counts[16], 1u);
  EXPECT_EQ(h.counts[31], 1u);
  EXPECT_EQ(build_scaled_histogram(img, 1).counts[0], 8u);
  EXPECT_EQ(build_scaled_histogram(img, 256).counts[255], 1u);
}

TEST(Histogram, RejectsInvalidBinCounts) {
  const GrayImage img(4, 4, 3);
  for (int b : {0, 3, 24, 512, -8}) EXPECT_THROW(build_scaled_histogram(img, b), Error) << b;
}

TEST(ChiSquare, MatchesDirectSum) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 2000; ++i) {
    const int bins = 1 << (rng() % 9);
    const auto a = random_histogram(rng, bins, true);
    const auto b = random_histogram(rng, bins, true);
    const double want = static_cast<double>(oracle::chi_square(a.counts, b.counts));
    const double got = chi_square_distance(a, b);
    ASSERT_NEAR(got, want, 1e-12 * std::max(1.0, want));
  }
}

TEST(ChiSquare, SymmetricBoundedZeroIffEqual) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_histogram(rng, 32, true);
    const auto b = random_histogram(rng, 32, true);
    const double d = chi_square_distance(a, b);
    EXPECT_EQ(d, chi_square_distance(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    EXPECT_EQ(chi_square_distance(a, a), 0.0);
    Histogram scaled = a;
    for (auto& c : scaled.counts) c *= 3;
    scaled.total *= 3;
    EXPECT_NEAR(chi_square_distance(a, scaled), 0.0, 1e-15);
  }
}

TEST(ChiSquare, DisjointSupportsAreAtTheMaximum) {
  Histogram a{{5, 0, 0, 0}, 5}, b{{0, 0, 2, 2}, 4};
  EXPECT_DOUBLE_EQ(chi_square_distance(a, b), 2.0);
}

TEST(ChiSquare, OneSidedVariant) {
  Histogram a{{1, 1}, 2}, b{{1, 3}, 4};
  // (0.5-0.25)^2/0.5 + (0.5-0.75)^2/0.5
  EXPECT_DOUBLE_EQ(chi_square_distance(a, b, ChiSquareVariant::one_sided), 0.25);
}

TEST(ChiSquare, Errors) {
  Histogram a{{1, 1}, 2}, b{{1, 1, 1, 1}, 4}, empty{{0, 0}, 0};
  EXPECT_THROW(chi_square_distance(a, b), Error);
  EXPECT_THROW(chi_square_distance(a, empty), Error);
}

TEST(VisualPresence, FractionOfNonGapFrames) {
  using F = std::vector<std::optional<bool>>;
  const F half{true, false, std::nullopt, true, false};
  EXPECT_TRUE(visual_presence(half, 0.5));
  EXPECT_FALSE(visual_presence(half, 0.51));
  const F all_gap{std::nullopt, std::nullopt};
  EXPECT_FALSE(visual_presence(all_gap, 0.0));
  EXPECT_FALSE(visual_presence(F{}, 0.5));
  const F none{false, false};
  EXPECT_FALSE(visual_presence(none, 0.5));
  EXPECT_TRUE(visual_presence(none, 0.0));
}

TEST(ContextualPresence, MinimumOverPairedFrames) {
  std::vector<Histogram> instr{{{4, 0}, 4}, {{2, 2}, 4}, {{0, 4}, 4}};
  std::vector<Histogram> stud{{{0, 4}, 4}, {{0, 4}, 4}, {{0, 4}, 4}};
  auto r = contextual_presence(instr, stud, 5, 0.25);
  EXPECT_EQ(r.min_distance, 0.0);
  EXPECT_TRUE(r.present);
  r = contextual_presence(instr, stud, 2, 0.25);  // third pair is out of reach
  EXPECT_NEAR(r.min_distance, 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(r.present);
  EXPECT_FALSE(contextual_presence(instr, {}, 5, 0.25).present);
}

TEST(ContextualPresence, MonotoneInThreshold) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<Histogram> a, b;
    for (int j = 0; j < 5; ++j) {
      a.push_back(random_histogram(rng, 32, true));
      b.push_back(random_histogram(rng, 32, true));
    }
    bool prev = false;
    for (double d = 0.0; d <= 2.0; d += 0.05) {
      const bool now = contextual_presence(a, b, 5, d).present;
      EXPECT_TRUE(!prev || now);
      prev = now;
    }
  }
}

TEST(ContextualPresence, SameSlideAcrossResolutionsIsPresent) {
  const synth::Deck deck(synth::ten_slide_deck(320, 180, 4.0), 5);
  const auto doc = synth::document_frame(320, 180);
  for (std::int64_t t = 0; t < deck.length(); t += 7) {
    const auto a = build_scaled_histogram(deck.render(t), 32);
    GrayImage b = synth::resize_nearest(deck.render(t), 240, 135);
    synth::add_noise(b, 2.0, static_cast<std::uint64_t>(t));
    EXPECT_LE(chi_square_distance(a, build_scaled_histogram(b, 32)), 0.25) << t;
    GrayImage c = synth::video_frame(320, 180, t, 5);
    EXPECT_GT(chi_square_distance(a, build_scaled_histogram(c, 32)), 0.25) << t;
    EXPECT_GT(chi_square_distance(a, build_scaled_histogram(doc, 32)), 0.25) << t;
  }
}
