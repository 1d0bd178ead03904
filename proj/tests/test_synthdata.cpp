#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "rp3d/synthdata.hpp"

using namespace rp3d;

namespace {

Scene hand_scene() {
  Scene sc;
  auto add = [&](int cls, double cx, double cy, double cz) {
    GtObject o;
    o.class_id = cls;
    o.box = {cx, cy, cz, 4, 4, 4};
    sc.objects.push_back(o);
  };
  add(1, 50, 50, 2);  // 0: table (anchor)
  add(0, 40, 50, 2);  // 1: chair, 10 from anchor
  add(0, 70, 50, 2);  // 2: chair, 20
  add(0, 50, 80, 2);  // 3: chair, 30
  add(5, 50, 50, 30);  // 4: lamp high above the table
  return sc;
}

std::vector<std::string> expected_relation_words(const std::string& rel) {
  if (rel == "left") return {"left", "of"};
  if (rel == "right") return {"right", "of"};
  if (rel == "front") return {"in", "front", "of"};
  if (rel == "behind") return {"behind"};
  if (rel == "above") return {"above"};
  if (rel == "below") return {"below"};
  if (rel == "closest") return {"closest", "to"};
  REQUIRE(rel == "farthest");
  return {"farthest", "from"};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("class names and ids are a bijection") {
  std::set<std::string> names;
  for (int i = 0; i < kNumClasses; ++i) {
    std::string n = class_name(i);
    CHECK(class_id(n) == i);
    names.insert(n);
  }
  CHECK(static_cast<int>(names.size()) == kNumClasses);
  CHECK(class_id("spaceship") == -1);
  CHECK_THROWS_AS(class_name(kNumClasses), std::out_of_range);
  CHECK_THROWS_AS(class_name(-1), std::out_of_range);
}

TEST_CASE("scene generation is deterministic per seed") {
  for (std::uint64_t seed : {1ULL, 42ULL, 987654321ULL}) {
    Scene a = generate_scene(seed);
    Scene b = generate_scene(seed);
    CHECK(a.id == b.id);
    CHECK(a.seed == b.seed);
    CHECK(a.coords == b.coords);
    CHECK(a.colors == b.colors);
    CHECK(a.normals == b.normals);
    REQUIRE(a.objects.size() == b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
      CHECK(a.objects[i].class_id == b.objects[i].class_id);
      CHECK(a.objects[i].box.cx == b.objects[i].box.cx);
      CHECK(a.objects[i].box.sz == b.objects[i].box.sz);
    }
  }
}

TEST_CASE("scenes have the promised object mix, bounds, and separation") {
  SceneConfig cfg;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Scene sc = generate_scene(seed, cfg);
    int nobj = static_cast<int>(sc.objects.size());
    REQUIRE(nobj >= cfg.n_target_instances + 1);
    REQUIRE(nobj <= cfg.n_target_instances + 1 + cfg.max_extra_objects);

    // The first objects repeat one class; the next object's class is unique scene-wide.
    int tclass = sc.objects[0].class_id;
    for (int i = 1; i < cfg.n_target_instances; ++i) CHECK(sc.objects[i].class_id == tclass);
    int aclass = sc.objects[static_cast<std::size_t>(cfg.n_target_instances)].class_id;
    CHECK(aclass != tclass);
    int acount = 0;
    for (const GtObject& o : sc.objects) acount += o.class_id == aclass ? 1 : 0;
    CHECK(acount == 1);

    for (const GtObject& o : sc.objects) {
      const Box& b = o.box;
      CHECK(b.sx > 0);
      CHECK(b.sy > 0);
      CHECK(b.sz > 0);
      CHECK(b.cx - b.sx / 2 >= 1.0 - 1e-9);
      CHECK(b.cx + b.sx / 2 <= cfg.room_x - 1.0 + 1e-9);
      CHECK(b.cy - b.sy / 2 >= 1.0 - 1e-9);
      CHECK(b.cy + b.sy / 2 <= cfg.room_y - 1.0 + 1e-9);
      CHECK(b.cz - b.sz / 2 >= -1e-9);
      CHECK(b.cz + b.sz / 2 <= cfg.room_z + 1e-9);
    }
    for (int i = 0; i < nobj; ++i)
      for (int j = i + 1; j < nobj; ++j) {
        const Box& a = sc.objects[static_cast<std::size_t>(i)].box;
        const Box& b = sc.objects[static_cast<std::size_t>(j)].box;
        double sep = std::max({std::abs(a.cx - b.cx) - (a.sx + b.sx) / 2,
                               std::abs(a.cy - b.cy) - (a.sy + b.sy) / 2,
                               std::abs(a.cz - b.cz) - (a.sz + b.sz) / 2});
        CHECK(sep >= cfg.placement_gap - 1e-9);
        CHECK(aabb_iou(a, b) == 0.0);
      }
  }
}

TEST_CASE("every object point sits on its box surface with the outward normal") {
  SceneConfig cfg;
  REQUIRE(cfg.points_per_object >= 32);
  for (std::uint64_t seed : {3ULL, 17ULL, 1234ULL}) {
    Scene sc = generate_scene(seed, cfg);
    int nobj = static_cast<int>(sc.objects.size());
    REQUIRE(sc.n_points() == nobj * cfg.points_per_object + cfg.floor_points);
    for (int oi = 0; oi < nobj; ++oi) {
      const Box& b = sc.objects[static_cast<std::size_t>(oi)].box;
      for (int k = 0; k < cfg.points_per_object; ++k) {
        std::size_t p = static_cast<std::size_t>(oi * cfg.points_per_object + k) * 3;
        double d[3] = {sc.coords[p] - b.cx, sc.coords[p + 1] - b.cy, sc.coords[p + 2] - b.cz};
        double h[3] = {b.sx / 2, b.sy / 2, b.sz / 2};
        double n[3] = {sc.normals[p], sc.normals[p + 1], sc.normals[p + 2]};
        int face_axis = -1;
        for (int ax = 0; ax < 3; ++ax) {
          CHECK(std::abs(d[ax]) <= h[ax] + 1e-9);
          if (n[ax] != 0.0) face_axis = ax;
        }
        REQUIRE(face_axis >= 0);
        // Unit axis normal pointing out of the face the point lies on.
        for (int ax = 0; ax < 3; ++ax)
          CHECK(std::abs(n[ax]) == (ax == face_axis ? 1.0 : 0.0));
        CHECK(std::abs(d[face_axis] - n[face_axis] * h[face_axis]) <= 1e-9);
      }
    }
    for (int k = 0; k < cfg.floor_points; ++k) {
      std::size_t p = static_cast<std::size_t>(nobj * cfg.points_per_object + k) * 3;
      CHECK(sc.coords[p + 2] == 0.0);
      CHECK(sc.normals[p] == 0.0);
      CHECK(sc.normals[p + 1] == 0.0);
      CHECK(sc.normals[p + 2] == 1.0);
      CHECK(sc.coords[p] >= 0.0);
      CHECK(sc.coords[p] <= cfg.room_x);
      CHECK(sc.coords[p + 1] >= 0.0);
      CHECK(sc.coords[p + 1] <= cfg.room_y);
    }
    for (double c : sc.colors) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
}

TEST_CASE("directional relations read off box centers with an inclusive margin") {
  Scene sc = hand_scene();
  CHECK(relation_holds(sc, 1, "left", 0, 5.0));
  CHECK(relation_holds(sc, 1, "left", 0, 10.0));       // boundary is inclusive
  CHECK_FALSE(relation_holds(sc, 1, "left", 0, 10.5));
  CHECK_FALSE(relation_holds(sc, 1, "right", 0, 5.0));
  CHECK(relation_holds(sc, 2, "right", 0, 20.0));
  CHECK_FALSE(relation_holds(sc, 2, "right", 0, 20.5));
  CHECK(relation_holds(sc, 3, "behind", 0, 30.0));
  CHECK_FALSE(relation_holds(sc, 3, "front", 0, 0.0));
  CHECK(relation_holds(sc, 4, "above", 0, 28.0));
  CHECK_FALSE(relation_holds(sc, 4, "above", 0, 28.5));
  CHECK(relation_holds(sc, 1, "below", 4, 28.0));
  CHECK_THROWS_AS(relation_holds(sc, 1, "inside", 0, 1.0), std::invalid_argument);
}

TEST_CASE("closest and farthest follow the argmin/argmax distance definition") {
  Scene sc = hand_scene();
  // Chair distances to the table anchor: 10 (obj 1), 20 (obj 2), 30 (obj 3).
  CHECK(relation_holds(sc, 1, "closest", 0, 5.0));
  CHECK_FALSE(relation_holds(sc, 2, "closest", 0, 5.0));
  CHECK_FALSE(relation_holds(sc, 3, "closest", 0, 5.0));
  CHECK(relation_holds(sc, 3, "farthest", 0, 5.0));
  CHECK_FALSE(relation_holds(sc, 2, "farthest", 0, 5.0));
  CHECK(relation_holds(sc, 1, "closest", 0, 10.0));     // 10 <= 20 - 10
  CHECK_FALSE(relation_holds(sc, 1, "closest", 0, 10.5));
  CHECK(satisfying_objects(sc, 0, "closest", 0, 5.0) == std::vector<int>{1});
  CHECK(satisfying_objects(sc, 0, "farthest", 0, 5.0) == std::vector<int>{3});
  CHECK(satisfying_objects(sc, 0, "left", 0, 5.0) == std::vector<int>{1});
  // The lone lamp is trivially its class's closest object.
  CHECK(relation_holds(sc, 4, "closest", 0, 5.0));
}

TEST_CASE("generated utterances are true, unambiguous, and well-formed") {
  int generated = 0;
  for (std::uint64_t seed = 1; seed <= 300 && generated < 150; ++seed) {
    Scene sc = generate_scene(seed);
    Utterance utt;
    try {
      utt = generate_utterance(sc, seed * 31 + 7);
    } catch (const std::runtime_error&) {
      continue;  // scene admits no unambiguous sentence; the dataset loop skips these
    }
    ++generated;

    REQUIRE(utt.target >= 0);
    REQUIRE(utt.target < static_cast<int>(sc.objects.size()));
    REQUIRE(utt.anchor >= 0);
    REQUIRE(utt.anchor < static_cast<int>(sc.objects.size()));
    CHECK(utt.target != utt.anchor);
    CHECK(sc.objects[static_cast<std::size_t>(utt.target)].class_id == utt.target_class);

    // Anchor is nameable (its class occurs once); the target class needs distractors.
    int acls = sc.objects[static_cast<std::size_t>(utt.anchor)].class_id;
    CHECK(acls != utt.target_class);
    int acount = 0, tcount = 0;
    for (const GtObject& o : sc.objects) {
      acount += o.class_id == acls ? 1 : 0;
      tcount += o.class_id == utt.target_class ? 1 : 0;
    }
    CHECK(acount == 1);
    CHECK(tcount >= 2);

    // Template shape: "the <target class> <relation words> the <anchor class>".
    std::vector<std::string> want = {"the", class_name(utt.target_class)};
    for (const std::string& w : expected_relation_words(utt.relation)) want.push_back(w);
    want.push_back("the");
    want.push_back(class_name(acls));
    CHECK(utt.tokens == want);
    for (const std::string& tok : utt.tokens) CHECK_NOTHROW(token_id(tok));

    // Independent truth check straight from the geometry, margin-free for the
    // target's side and mirrored for every distractor.
    const Box& t = sc.objects[static_cast<std::size_t>(utt.target)].box;
    const Box& a = sc.objects[static_cast<std::size_t>(utt.anchor)].box;
    auto dist = [&](const Box& b) {
      return std::sqrt((b.cx - a.cx) * (b.cx - a.cx) + (b.cy - a.cy) * (b.cy - a.cy) +
                       (b.cz - a.cz) * (b.cz - a.cz));
    };
    for (int i = 0; i < static_cast<int>(sc.objects.size()); ++i) {
      if (sc.objects[static_cast<std::size_t>(i)].class_id != utt.target_class || i == utt.target)
        continue;
      const Box& o = sc.objects[static_cast<std::size_t>(i)].box;
      if (utt.relation == "left") {
        CHECK(t.cx <= a.cx - 5.0);
        CHECK(o.cx >= a.cx + 5.0);
      } else if (utt.relation == "right") {
        CHECK(t.cx >= a.cx + 5.0);
        CHECK(o.cx <= a.cx - 5.0);
      } else if (utt.relation == "front") {
        CHECK(t.cy <= a.cy - 5.0);
        CHECK(o.cy >= a.cy + 5.0);
      } else if (utt.relation == "behind") {
        CHECK(t.cy >= a.cy + 5.0);
        CHECK(o.cy <= a.cy - 5.0);
      } else if (utt.relation == "above") {
        CHECK(t.cz >= a.cz + 5.0);
        CHECK(o.cz <= a.cz - 5.0);
      } else if (utt.relation == "below") {
        CHECK(t.cz <= a.cz - 5.0);
        CHECK(o.cz >= a.cz + 5.0);
      } else if (utt.relation == "closest") {
        CHECK(dist(t) <= dist(o) - 5.0);
      } else if (utt.relation == "farthest") {
        CHECK(dist(t) >= dist(o) + 5.0);
      } else {
        FAIL("unexpected relation ", utt.relation);
      }
    }
    // Even with no margin at all, the target is the only satisfier.
    CHECK(satisfying_objects(sc, utt.target_class, utt.relation, utt.anchor, 0.0) ==
          std::vector<int>{utt.target});

    // Same seed, same sentence.
    Utterance again = generate_utterance(sc, seed * 31 + 7);
    CHECK(again.tokens == utt.tokens);
    CHECK(again.target == utt.target);
    CHECK(again.anchor == utt.anchor);
  }
  CHECK(generated >= 100);
}

TEST_CASE("relevance targets flag seeds inside mentioned-class boxes") {
  Scene sc = hand_scene();
  Utterance utt;
  utt.tokens = {"the", "chair", "closest", "to", "the", "table"};
  utt.target = 1;
  utt.anchor = 0;
  utt.relation = "closest";
  utt.target_class = 0;
  std::vector<double> seeds = {
      40, 50, 2,    // inside chair 1
      50, 80, 3,    // inside chair 3 (distractor still counts: class is mentioned)
      50, 50, 2,    // inside the table
      50, 50, 30,   // inside the lamp, class not mentioned
      -20, -20, -20  // free space
  };
  std::vector<double> want = {1, 1, 1, 0, 0};
  CHECK(mentioned_class_targets(sc, utt, seeds) == want);
  CHECK_THROWS_AS(mentioned_class_targets(sc, utt, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("vocabulary is closed, ordered, and rejects unknown tokens") {
  const std::vector<std::string>& v = vocabulary();
  std::set<std::string> uniq(v.begin(), v.end());
  CHECK(uniq.size() == v.size());
  for (int i = 0; i < static_cast<int>(v.size()); ++i)
    CHECK(token_id(v[static_cast<std::size_t>(i)]) == i);
  CHECK(token_id("the") == 0);
  CHECK_THROWS_AS(token_id("window"), std::out_of_range);
}

TEST_CASE("dataset files round-trip every sample bitwise") {
  std::vector<Sample> samples;
  for (std::uint64_t seed = 50; samples.size() < 5; ++seed) {
    Sample s;
    s.scene = generate_scene(seed);
    try {
      s.utterance = generate_utterance(s.scene, seed + 1);
    } catch (const std::runtime_error&) {
      continue;
    }
    samples.push_back(std::move(s));
  }
  const std::string path = "/tmp/rp3d_roundtrip.jsonl";
  write_dataset(path, samples);
  std::vector<Sample> back = read_dataset(path);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& a = samples[i];
    const Sample& b = back[i];
    CHECK(a.scene.id == b.scene.id);
    CHECK(a.scene.seed == b.scene.seed);
    CHECK(a.scene.coords == b.scene.coords);   // exact doubles via the binary payload
    CHECK(a.scene.colors == b.scene.colors);
    CHECK(a.scene.normals == b.scene.normals);
    REQUIRE(a.scene.objects.size() == b.scene.objects.size());
    for (std::size_t k = 0; k < a.scene.objects.size(); ++k) {
      CHECK(a.scene.objects[k].class_id == b.scene.objects[k].class_id);
      CHECK(a.scene.objects[k].box.cx == b.scene.objects[k].box.cx);
      CHECK(a.scene.objects[k].box.cy == b.scene.objects[k].box.cy);
      CHECK(a.scene.objects[k].box.cz == b.scene.objects[k].box.cz);
      CHECK(a.scene.objects[k].box.sx == b.scene.objects[k].box.sx);
      CHECK(a.scene.objects[k].box.sy == b.scene.objects[k].box.sy);
      CHECK(a.scene.objects[k].box.sz == b.scene.objects[k].box.sz);
    }
    CHECK(a.utterance.tokens == b.utterance.tokens);
    CHECK(a.utterance.target == b.utterance.target);
    CHECK(a.utterance.anchor == b.utterance.anchor);
    CHECK(a.utterance.relation == b.utterance.relation);
    CHECK(a.utterance.target_class == b.utterance.target_class);
  }
  // Writing the parsed samples again reproduces the file byte for byte.
  const std::string path2 = "/tmp/rp3d_roundtrip2.jsonl";
  write_dataset(path2, back);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("dataset reader reports the offending line") {
  const std::string path = "/tmp/rp3d_badline.jsonl";
  {
    std::vector<Sample> one;
    for (std::uint64_t seed = 90;; ++seed) {
      Sample s;
      s.scene = generate_scene(seed);
      try {
        s.utterance = generate_utterance(s.scene, seed);
      } catch (const std::runtime_error&) {
        continue;
      }
      one.push_back(std::move(s));
      break;
    }
    write_dataset(path, one);
    std::ofstream f(path, std::ios::app);
    f << "this is not json\n";
  }
  try {
    read_dataset(path);
    FAIL("expected a parse failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  {
    std::ofstream f(path);
    f << R"({"scene_id": 7})" << '\n';
  }
  try {
    read_dataset(path);
    FAIL("expected a missing-field failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  {
    std::ofstream f(path);
  }
  CHECK(read_dataset(path).empty());
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_dataset("/tmp/rp3d_does_not_exist.jsonl"), std::runtime_error);
}

TEST_CASE("relation-word counting is longest-match over word boundaries") {
  RelationLexicon lex = default_lexicon();
  CorpusStats s1 = count_relation_words({"the chair left of the table"}, lex);
  CHECK(s1.n_sentences == 1);
  CHECK(s1.with1 == 1);
  CHECK(s1.phrase_counts.at("left of") == 1);
  CHECK(s1.phrase_counts.count("left") == 0);

  CorpusStats s2 = count_relation_words({"On the LEFT, next to the window."}, lex);
  CHECK(s2.with2plus == 1);
  CHECK(s2.phrase_counts.at("left") == 1);
  CHECK(s2.phrase_counts.at("next to") == 1);

  CorpusStats s3 = count_relation_words({"the plant in front of the bed"}, lex);
  CHECK(s3.with1 == 1);
  CHECK(s3.phrase_counts.at("in front of") == 1);
  CHECK(s3.phrase_counts.count("front of") == 0);

  CorpusStats s4 = count_relation_words({"a red cube and a blue ball"}, lex);
  CHECK(s4.with0 == 1);
  CHECK(s4.ratio_at_least1() == 0.0);

  CorpusStats s5 = count_relation_words(
      {"the chair left of the table", "no relation here", "under the bed, behind the sofa"}, lex);
  CHECK(s5.n_sentences == 3);
  CHECK(s5.with0 == 1);
  CHECK(s5.with1 == 1);
  CHECK(s5.with2plus == 1);
  CHECK(s5.ratio_at_least1() == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(count_relation_words({"anything"}, RelationLexicon{}), std::invalid_argument);
  CHECK(count_relation_words({}, lex).n_sentences == 0);
  CHECK(count_relation_words({}, lex).ratio_at_least1() == 0.0);
}

TEST_CASE("lexicon files parse categories, phrases, and comments") {
  const std::string path = "/tmp/rp3d_lexicon.txt";
  {
    std::ofstream f(path);
    f << "# spatial words\n"
      << "left: left of\n"
      << "left: left\n"
      << "  closest :  next to  \n"
      << "\n"
      << "Below: beneath  # trailing note\n";
  }
  RelationLexicon lex = read_lexicon(path);
  CHECK(lex.at("left") == std::vector<std::string>{"left of", "left"});
  CHECK(lex.at("closest") == std::vector<std::string>{"next to"});
  CHECK(lex.at("below") == std::vector<std::string>{"beneath"});
  {
    std::ofstream f(path);
    f << "left: left of\n"
      << "nonsense without separator\n";
  }
  try {
    read_lexicon(path);
    FAIL("expected a lexicon parse failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("every generated sentence names at least one relation") {
  RelationLexicon lex = default_lexicon();
  std::vector<std::string> sentences;
  for (std::uint64_t seed = 500; sentences.size() < 100; ++seed) {
    Scene sc = generate_scene(seed);
    Utterance utt;
    try {
      utt = generate_utterance(sc, seed);
    } catch (const std::runtime_error&) {
      continue;
    }
    std::string joined;
    for (const std::string& t : utt.tokens) {
      if (!joined.empty()) joined += ' ';
      joined += t;
    }
    sentences.push_back(joined);
  }
  CorpusStats stats = count_relation_words(sentences, lex);
  CHECK(stats.n_sentences == 100);
  CHECK(stats.with0 == 0);
  CHECK(stats.ratio_at_least1() == 1.0);
}
