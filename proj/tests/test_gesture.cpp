#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "followme/errors.hpp"
#include "followme/gesture.hpp"
#include "followme/harness.hpp"
#include "followme/rng.hpp"

namespace gesture = followme::gesture;
namespace harness = followme::harness;
using followme::InvalidInputError;
using followme::ParseError;
using followme::Rng;
using followme::TrainingError;
using gesture::Command;
using gesture::GestureClass;

namespace {

double max_pairwise_distance(const gesture::LandmarkSet& lm) {
  double max_d = 0.0;
  for (int i = 0; i < gesture::kLandmarkCount; ++i) {
    for (int j = i + 1; j < gesture::kLandmarkCount; ++j) {
      double sq = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = lm.points[i][k] - lm.points[j][k];
        sq += d * d;
      }
      max_d = std::max(max_d, std::sqrt(sq));
    }
  }
  return max_d;
}

// Independent reference for the debounce contract: a command fires exactly
// when the run of identical non-Other classes ending at this step has length
// exactly `xi`.
std::optional<Command> expected_emission(const std::vector<GestureClass>& s,
                                         std::size_t t, int xi) {
  std::size_t run = 1;
  while (run <= t && s[t - run] == s[t]) ++run;
  if (static_cast<int>(run) != xi) return std::nullopt;
  if (s[t] == GestureClass::Other) return std::nullopt;
  return s[t] == GestureClass::Wait ? Command::Wait : Command::Follow;
}

}  // namespace

TEST_CASE("flatten lays out coordinates point-major") {
  gesture::LandmarkSet lm;
  lm.points[0] = {1.0, 2.0, 3.0};
  lm.points[20] = {-7.0, 8.0, 9.0};
  const auto flat = lm.flatten();
  REQUIRE(flat.size() == static_cast<std::size_t>(gesture::kFlatDim));
  CHECK(flat[0] == 1.0);
  CHECK(flat[1] == 2.0);
  CHECK(flat[2] == 3.0);
  CHECK(flat[60] == -7.0);
  CHECK(flat[62] == 9.0);
}

TEST_CASE("scale normalization fixes the hand span to one") {
  Rng rng(11);
  gesture::LandmarkSet lm = harness::gen_landmarks(GestureClass::Wait, rng);
  const gesture::LandmarkSet norm = gesture::scale_normalized(lm);
  CHECK_THAT(max_pairwise_distance(norm),
             Catch::Matchers::WithinAbs(1.0, 1e-12));

  SECTION("uniform scaling of the input is cancelled") {
    gesture::LandmarkSet big = lm;
    for (auto& p : big.points) {
      for (double& v : p) v *= 37.5;
    }
    const gesture::LandmarkSet norm_big = gesture::scale_normalized(big);
    for (int i = 0; i < gesture::kLandmarkCount; ++i) {
      for (int k = 0; k < 3; ++k) {
        CHECK_THAT(norm_big.points[i][k],
                   Catch::Matchers::WithinAbs(norm.points[i][k], 1e-12));
      }
    }
  }

  SECTION("degenerate single-point hand passes through") {
    gesture::LandmarkSet flat_hand;
    for (auto& p : flat_hand.points) p = {0.5, 0.5, 0.5};
    const gesture::LandmarkSet out = gesture::scale_normalized(flat_hand);
    CHECK(out.points[3] == flat_hand.points[3]);
  }
}

TEST_CASE("generated gestures have the intended silhouette") {
  // After normalization the fingertips of an open hand sit far from the
  // palm centre (the coordinate origin), a closed fist keeps them close; the
  // two classes must be separated by a wide geometric margin for any seed.
  Rng rng(77);
  for (int rep = 0; rep < 25; ++rep) {
    const auto wait = gesture::scale_normalized(
        harness::gen_landmarks(GestureClass::Wait, rng));
    const auto follow = gesture::scale_normalized(
        harness::gen_landmarks(GestureClass::Follow, rng));
    // fingertips are landmarks 4, 8, 12, 16, 20
    for (int tip : {4, 8, 12, 16, 20}) {
      const auto dist = [&](const gesture::LandmarkSet& lm) {
        double sq = 0.0;
        for (int k = 0; k < 3; ++k) sq += lm.points[tip][k] * lm.points[tip][k];
        return std::sqrt(sq);
      };
      CHECK(dist(wait) > 0.8);
      CHECK(dist(follow) < 0.35);
    }
  }
}

TEST_CASE("auto gamma is the inverse of dim times pooled variance") {
  gesture::LabeledLandmarks a;
  gesture::LabeledLandmarks b;
  for (int i = 0; i < gesture::kLandmarkCount; ++i) {
    a.landmarks.points[i] = {1.0, 1.0, 1.0};
    b.landmarks.points[i] = {-1.0, -1.0, -1.0};
  }
  // pooled mean 0, pooled variance 1 -> gamma = 1/63
  CHECK_THAT(gesture::auto_gamma({a, b}),
             Catch::Matchers::WithinAbs(1.0 / 63.0, 1e-15));
  CHECK(gesture::auto_gamma({}) == 1.0);
  CHECK(gesture::auto_gamma({a, a}) == 1.0);  // zero variance fallback
}

TEST_CASE("train validates its corpus") {
  Rng rng(5);
  std::vector<gesture::LabeledLandmarks> data;
  for (int i = 0; i < 4; ++i) {
    gesture::LabeledLandmarks d;
    d.landmarks = harness::gen_landmarks(GestureClass::Wait, rng);
    d.label = GestureClass::Wait;
    data.push_back(d);
  }

  SECTION("a single class cannot be separated") {
    CHECK_THROWS_AS(gesture::train(data), TrainingError);
    CHECK_THROWS_AS(gesture::train({}), TrainingError);
  }
  SECTION("non-finite landmarks are rejected") {
    auto bad = data;
    bad[1].landmarks.points[3][1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(gesture::train(bad), InvalidInputError);
  }
  SECTION("two classes produce exactly one pairwise classifier") {
    auto two = data;
    for (int i = 0; i < 4; ++i) {
      gesture::LabeledLandmarks d;
      d.landmarks = harness::gen_landmarks(GestureClass::Follow, rng);
      d.label = GestureClass::Follow;
      two.push_back(d);
    }
    const gesture::GestureModel m = gesture::train(two);
    REQUIRE(m.pairs.size() == 1);
    CHECK(m.pairs[0].positive == GestureClass::Wait);
    CHECK(m.pairs[0].negative == GestureClass::Follow);
    CHECK(m.training_samples == two.size());
  }
  SECTION("explicit gamma is honoured") {
    auto two = data;
    for (int i = 0; i < 4; ++i) {
      gesture::LabeledLandmarks d;
      d.landmarks = harness::gen_landmarks(GestureClass::Follow, rng);
      d.label = GestureClass::Follow;
      two.push_back(d);
    }
    gesture::TrainOptions opts;
    opts.gamma = 2.5;
    CHECK(gesture::train(two, opts).gamma == 2.5);
    CHECK(gesture::train(two).gamma == Catch::Approx(gesture::auto_gamma(two)));
  }
}

TEST_CASE("held-out gesture accuracy clears 0.97", "[acceptance]") {
  // 3-class corpus, 500 per class for training, 200 per class held out.
  const auto train_set = harness::make_gesture_corpus(500, 61001);
  const auto test_set = harness::make_gesture_corpus(200, 61002);
  const gesture::GestureModel model = gesture::train(train_set);
  REQUIRE(model.pairs.size() == 3);

  std::size_t correct = 0;
  for (const auto& d : test_set) {
    if (gesture::classify(model, d.landmarks) == d.label) ++correct;
  }
  const double accuracy =
      static_cast<double>(correct) / static_cast<double>(test_set.size());
  INFO("held-out accuracy " << accuracy);
  CHECK(accuracy >= 0.97);
}

TEST_CASE("classify breaks vote ties on aggregate decision values") {
  // Classifiers with no support vectors produce a constant decision equal to
  // the bias, which makes vote outcomes fully scriptable.
  const auto constant_pair = [](GestureClass pos, GestureClass neg,
                                double bias) {
    gesture::PairwiseClassifier pc;
    pc.positive = pos;
    pc.negative = neg;
    pc.model.bias = bias;
    pc.model.gamma = 1.0;
    return pc;
  };
  gesture::LandmarkSet lm;

  SECTION("one vote each, aggregate picks the winner") {
    gesture::GestureModel m;
    m.pairs = {constant_pair(GestureClass::Wait, GestureClass::Follow, 1.0),
               constant_pair(GestureClass::Wait, GestureClass::Other, -1.0),
               constant_pair(GestureClass::Follow, GestureClass::Other, 2.0)};
    // votes: Wait, Other, Follow -> 1 each
    // aggregates: Wait 1-1=0, Follow -1+2=1, Other 1-2=-1
    CHECK(gesture::classify(m, lm) == GestureClass::Follow);
  }
  SECTION("full tie falls back to declaration order") {
    gesture::GestureModel m;
    m.pairs = {constant_pair(GestureClass::Wait, GestureClass::Follow, 1.0),
               constant_pair(GestureClass::Wait, GestureClass::Other, -1.0),
               constant_pair(GestureClass::Follow, GestureClass::Other, 1.0)};
    // votes 1 each; aggregates: Wait 0, Follow 0, Other 0
    CHECK(gesture::classify(m, lm) == GestureClass::Wait);
  }
  SECTION("empty model is rejected") {
    gesture::GestureModel m;
    CHECK_THROWS_AS(gesture::classify(m, lm), InvalidInputError);
  }
}

TEST_CASE("debouncer matches the reference on every short stream",
          "[acceptance]") {
  // Exhaustive over all 3^8 streams of length 8 with the default count of 5:
  // emission happens only at the step where a run of identical non-Other
  // classes reaches exactly length 5.
  constexpr int kXi = gesture::kDefaultDebounceCount;
  static_assert(kXi == 5);
  constexpr std::size_t kLen = 8;
  std::size_t total = 1;
  for (std::size_t i = 0; i < kLen; ++i) total *= 3;

  for (std::size_t code = 0; code < total; ++code) {
    std::vector<GestureClass> stream(kLen);
    std::size_t v = code;
    for (std::size_t i = 0; i < kLen; ++i) {
      stream[i] = static_cast<GestureClass>(v % 3);
      v /= 3;
    }
    gesture::Debouncer deb(kXi);
    for (std::size_t t = 0; t < kLen; ++t) {
      const auto got = deb.step(stream[t]);
      const auto want = expected_emission(stream, t, kXi);
      if (got != want) {
        CAPTURE(code, t);
        REQUIRE(got == want);
      }
    }
  }
  SUCCEED("all 6561 streams matched the reference");
}

TEST_CASE("debouncer emits exactly once per sustained run") {
  gesture::Debouncer deb(5);
  for (int i = 0; i < 4; ++i) {
    CHECK_FALSE(deb.step(GestureClass::Follow).has_value());
  }
  const auto cmd = deb.step(GestureClass::Follow);
  REQUIRE(cmd.has_value());
  CHECK(*cmd == Command::Follow);
  for (int i = 0; i < 20; ++i) {
    CHECK_FALSE(deb.step(GestureClass::Follow).has_value());
  }
  // a break and a fresh run re-arms it
  CHECK_FALSE(deb.step(GestureClass::Other).has_value());
  for (int i = 0; i < 4; ++i) {
    CHECK_FALSE(deb.step(GestureClass::Follow).has_value());
  }
  CHECK(deb.step(GestureClass::Follow) == Command::Follow);
}

TEST_CASE("debouncer ignores Other and resets on interruptions") {
  gesture::Debouncer deb(5);
  for (int i = 0; i < 50; ++i) {
    CHECK_FALSE(deb.step(GestureClass::Other).has_value());
  }
  // four Waits, interrupted, then five more: only the fifth consecutive fires
  for (int i = 0; i < 4; ++i) deb.step(GestureClass::Wait);
  CHECK_FALSE(deb.step(GestureClass::Follow).has_value());
  for (int i = 0; i < 4; ++i) {
    CHECK_FALSE(deb.step(GestureClass::Wait).has_value());
  }
  CHECK(deb.step(GestureClass::Wait) == Command::Wait);
}

TEST_CASE("debouncer manual reset and configuration") {
  CHECK_THROWS_AS(gesture::Debouncer(0), InvalidInputError);
  CHECK_THROWS_AS(gesture::Debouncer(-3), InvalidInputError);

  gesture::Debouncer deb(2);
  CHECK(deb.required_count() == 2);
  deb.step(GestureClass::Wait);
  deb.reset();
  CHECK_FALSE(deb.step(GestureClass::Wait).has_value());
  CHECK(deb.step(GestureClass::Wait) == Command::Wait);

  gesture::Debouncer immediate(1);
  CHECK(immediate.step(GestureClass::Follow) == Command::Follow);
  CHECK_FALSE(immediate.step(GestureClass::Follow).has_value());
  CHECK_FALSE(immediate.step(GestureClass::Other).has_value());
}

TEST_CASE("gesture model json round-trip preserves decisions") {
  const auto corpus = harness::make_gesture_corpus(12, 999);
  const gesture::GestureModel m = gesture::train(corpus);
  const gesture::GestureModel back =
      gesture::model_from_json(gesture::model_to_json(m));

  REQUIRE(back.pairs.size() == m.pairs.size());
  CHECK(back.gamma == m.gamma);
  CHECK(back.c == m.c);
  CHECK(back.training_samples == m.training_samples);
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const auto query = harness::gen_landmarks(
        static_cast<GestureClass>(i % 3), rng);
    CHECK(gesture::classify(back, query) == gesture::classify(m, query));
  }

  const auto path =
      std::filesystem::temp_directory_path() / "followme_model.json";
  gesture::save_model(path.string(), m);
  const gesture::GestureModel loaded = gesture::load_model(path.string());
  CHECK(loaded.pairs.size() == m.pairs.size());
  CHECK(loaded.pairs[0].model.bias == m.pairs[0].model.bias);
  std::filesystem::remove(path);
}

TEST_CASE("gesture model json rejects malformed input") {
  const auto corpus = harness::make_gesture_corpus(8, 1234);
  const nlohmann::json good = gesture::model_to_json(gesture::train(corpus));

  nlohmann::json bad = good;
  bad["kernel"] = "linear";
  CHECK_THROWS_AS(gesture::model_from_json(bad), ParseError);

  bad = good;
  bad.erase("gamma");
  CHECK_THROWS_AS(gesture::model_from_json(bad), ParseError);

  bad = good;
  bad["gamma"] = -1.0;
  CHECK_THROWS_AS(gesture::model_from_json(bad), ParseError);

  bad = good;
  bad["pairs"][0]["positive"] = "shrug";
  CHECK_THROWS_AS(gesture::model_from_json(bad), ParseError);

  bad = good;
  bad["pairs"][0]["coefficients"] = std::vector<double>{1.0};
  CHECK_THROWS_AS(gesture::model_from_json(bad), ParseError);

  bad = good;
  bad["pairs"] = nlohmann::json::array();
  CHECK_THROWS_AS(gesture::model_from_json(bad), ParseError);

  CHECK_THROWS_AS(gesture::model_from_json(nlohmann::json(17)), ParseError);
}

TEST_CASE("corpus csv round-trips exactly") {
  const auto corpus = harness::make_gesture_corpus(5, 31415);
  std::ostringstream out;
  gesture::write_corpus(out, corpus);
  std::istringstream in(out.str());
  const auto back = gesture::read_corpus(in, "mem");

  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].label == corpus[i].label);
    CHECK(back[i].landmarks.points == corpus[i].landmarks.points);
  }
}

TEST_CASE("corpus csv parser reports precise errors") {
  SECTION("empty file") {
    std::istringstream in("");
    CHECK_THROWS_AS(gesture::read_corpus(in, "c.csv"), ParseError);
  }
  SECTION("header only is an empty corpus") {
    std::istringstream in("h\n");
    CHECK(gesture::read_corpus(in, "c.csv").empty());
  }
  SECTION("short row") {
    std::istringstream in("h\n1.0,2.0,wait\n");
    try {
      gesture::read_corpus(in, "c.csv");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.field_path == "c.csv:2");
    }
  }
  SECTION("bad number and unknown label") {
    std::string row;
    for (int i = 0; i < 63; ++i) row += "0.0,";
    std::istringstream bad_label("h\n" + row + "dance\n");
    CHECK_THROWS_AS(gesture::read_corpus(bad_label, "c.csv"), ParseError);

    std::string bad_row = "oops," + row.substr(4) + "wait";
    std::istringstream bad_num("h\n" + bad_row + "\n");
    CHECK_THROWS_AS(gesture::read_corpus(bad_num, "c.csv"), ParseError);
  }
  SECTION("file io") {
    const auto path =
        std::filesystem::temp_directory_path() / "followme_corpus.csv";
    const auto corpus = harness::make_gesture_corpus(2, 777);
    gesture::save_corpus(path.string(), corpus);
    CHECK(gesture::load_corpus(path.string()).size() == corpus.size());
    std::filesystem::remove(path);
  }
}
