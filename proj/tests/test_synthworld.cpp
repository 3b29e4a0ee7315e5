#include <doctest.h>

#include <map>

#include <set>

#include "helpers.hpp"
#include "tmt/speech.hpp"
#include "tmt/synthworld.hpp"

using namespace tmt;

TEST_CASE("scenes are deterministic and valid") {
  CHECK(sample_scene(42) == sample_scene(42));
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Scene sc = sample_scene(s);
    check_scene(sc);
    CHECK(sc.objects.size() >= 1);
    CHECK(sc.objects.size() <= 3);
  }
  int collisions = 0;
  for (std::uint64_t s = 0; s < 100; ++s) collisions += sample_scene(s) == sample_scene(s + 1) ? 1 : 0;
  CHECK(collisions <= 2);

  Scene bad{{{Shape::Circle, Color::Red, 0, 0}, {Shape::Square, Color::Blue, 0, 0}}, 0};
  CHECK(test::error_of([&] { check_scene(bad); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("rendering") {
  const Scene one{{{Shape::Circle, Color::Red, 0, 0}}, 0};
  const Raster img = render_image(one);
  CHECK(img.height == 32);
  CHECK(img.width == 32);
  CHECK(render_image(one) == img);
  bool has_red = false;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool red = img.at(y, x, 0) == 255 && img.at(y, x, 1) == 0 && img.at(y, x, 2) == 0;
      const bool white = img.at(y, x, 0) == 255 && img.at(y, x, 1) == 255 && img.at(y, x, 2) == 255;
      CHECK((red || white));
      if (y >= 8 || x >= 8) CHECK(white);
      has_red |= red;
    }
  }
  CHECK(has_red);

  // one glyph: every non-white pixel lies in the object's cell
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Scene sc = sample_scene(s);
    const Raster r = render_image(sc);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const bool white = r.at(y, x, 0) == 255 && r.at(y, x, 1) == 255 && r.at(y, x, 2) == 255;
        if (white) continue;
        bool inside = false;
        for (const auto& o : sc.objects) inside |= y / kCellPixels == o.row && x / kCellPixels == o.col;
        CHECK(inside);
      }
    }
  }
}

TEST_CASE("captions") {
  CHECK(caption_scene({{{Shape::Circle, Color::Red, 0, 0}}, 0}) == "a red circle");
  CHECK(caption_scene({{{Shape::Square, Color::Blue, 0, 1}, {Shape::Circle, Color::Red, 0, 0}}, 0}) ==
        "a red circle and a blue square");

  // captions identify scenes: equal captions imply equal scenes
  std::map<std::string, Scene> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Scene sc = sample_scene(s);
    const auto [it, fresh] = seen.emplace(caption_scene(sc), sc);
    if (!fresh) CHECK(it->second == sc);
  }
}

TEST_CASE("speech synthesis") {
  const auto& inv = speech_inventory();
  CHECK(inv.size() == 27);
  // zero-noise transcription is exact and prototypes are distinct
  std::set<std::vector<double>> protos;
  for (char c : inv) {
    const auto p = speech_prototype(c);
    protos.insert(std::vector<double>(p.data(), p.data() + p.size()));
    CHECK(p.size() == kFeatureDim);
  }
  CHECK(protos.size() == inv.size());
  const RowMatrix all = synthesize_speech_features(inv, 0.0, 1);
  const auto d = speech_durations(inv, 1);
  std::string expected;
  for (std::size_t i = 0; i < inv.size(); ++i) expected += std::string(static_cast<std::size_t>(d[i]), inv[i]);
  CHECK(transcribe_frames(all) == expected);

  const RowMatrix a = synthesize_speech_features("a blue square", 0.3, 5);
  CHECK(a == synthesize_speech_features("a blue square", 0.3, 5));

  std::uint64_t seed = 0;
  while (speech_durations("ab", seed) != std::vector<int>{3, 2}) ++seed;
  const RowMatrix ab = synthesize_speech_features("ab", 0.0, seed);
  REQUIRE(ab.rows() == 5);
  CHECK(ab.row(0) == ab.row(1));
  CHECK(ab.row(1) == ab.row(2));
  CHECK(ab.row(3) == ab.row(4));
  CHECK(ab.row(2) != ab.row(3));

  for (int x : speech_durations("a red circle and a green triangle", 9)) {
    CHECK(x >= 2);
    CHECK(x <= 4);
  }
  CHECK(test::error_of([] { speech_prototype('Q'); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("corpus generation") {
  CHECK(split_sizes(100).train == 90);
  CHECK(split_sizes(100).valid == 5);
  CHECK(split_sizes(100).test == 5);
  CHECK(split_sizes(3).valid == 1);
  CHECK(split_sizes(3).test == 1);

  const auto dir = test::temp_dir("corpus");
  const auto a = generate_corpus(dir / "a", 100, 7, 0.0);
  generate_corpus(dir / "b", 100, 7, 0.0);
  CHECK(a.train.size() == 90);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), dir / "a");
    CHECK(test::slurp(entry.path()) == test::slurp(dir / "b" / rel));
  }

  std::set<std::string> train_ids;
  for (const auto& e : a.train) train_ids.insert(e.id);
  for (const auto& e : a.test) CHECK(!train_ids.count(e.id));
  for (const auto& e : a.valid) CHECK(!train_ids.count(e.id));

  const auto back = read_corpus(dir / "a");
  CHECK(back.test.size() == a.test.size());
  // stored views agree with a regeneration from the scene
  for (const auto& e : back.test) {
    const auto ex = load_example(dir / "a", e);
    CHECK(ex.image.height == 32);
    CHECK(ex.speech_features.cols() == kFeatureDim);
    CHECK(transcribe_frames(ex.speech_features).size() == static_cast<std::size_t>(ex.speech_features.rows()));
  }
  CHECK(test::error_of([&] { generate_corpus(dir / "c", 2, 1, 0.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("file formats") {
  const auto dir = test::temp_dir("formats");
  const Raster img = render_image(sample_scene(3));
  write_ppm(img, dir / "x.ppm");
  CHECK(test::slurp(dir / "x.ppm").rfind("P6\n32 32\n255\n", 0) == 0);
  CHECK(read_ppm(dir / "x.ppm") == img);

  const RowMatrix f = synthesize_speech_features("a red circle", 0.1, 2);
  write_features(f, dir / "x.feat");
  CHECK(test::slurp(dir / "x.feat").rfind("TMTFEAT 13 " + std::to_string(f.rows()) + "\n", 0) == 0);
  CHECK(read_features(dir / "x.feat") == f);
}
