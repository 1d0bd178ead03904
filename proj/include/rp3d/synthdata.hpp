#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rp3d/rng.hpp"
#include "rp3d/supervision.hpp"

namespace rp3d {

constexpr int kNumClasses = 8;
const char* class_name(int id);
int class_id(const std::string& name);  // -1 when unknown

// Synthetic room. Points are stored structure-of-arrays, n*3 each.
struct Scene {
  int id = 0;
  std::uint64_t seed = 0;
  std::vector<double> coords;
  std::vector<double> colors;
  std::vector<double> normals;
  std::vector<GtObject> objects;

  int n_points() const { return static_cast<int>(coords.size() / 3); }
};

struct Utterance {
  std::vector<std::string> tokens;
  int target = -1;        // object index in the scene
  int anchor = -1;        // object index in the scene
  std::string relation;   // left right front behind above below closest farthest
  int target_class = -1;
};

struct Sample {
  Scene scene;
  Utterance utterance;
};

struct SceneConfig {
  double room_x = 100.0, room_y = 100.0, room_z = 50.0;
  int n_target_instances = 3;  // same-class distractor count + 1
  int max_extra_objects = 4;   // beyond target instances and the anchor
  int points_per_object = 48;
  int floor_points = 96;
  double color_noise = 0.05;
  double placement_gap = 1.0;  // minimum box separation
};

// Deterministic per seed. Throws std::runtime_error naming the seed when a
// non-overlapping placement cannot be found within 1000 attempts.
Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg = {});

const std::vector<std::string>& relation_tags();

// True when `obj` stands in `relation` to `anchor` with the given margin,
// judged on box centers. closest/farthest compare against the other objects
// of obj's class.
bool relation_holds(const Scene& scene, int obj, const std::string& relation, int anchor,
                    double margin);

// Objects of target_class satisfying the relation (uniqueness wants exactly 1).
std::vector<int> satisfying_objects(const Scene& scene, int target_class,
                                    const std::string& relation, int anchor, double margin);

// Picks a (target, relation, anchor) triple whose relation is unambiguous
// with margin 5 and fills the "the <class> <relation> the <class>" template.
// Throws std::runtime_error when the scene admits no valid triple.
Utterance generate_utterance(const Scene& scene, std::uint64_t seed, double margin = 5.0);

// Closed vocabulary covering everything the templates can emit.
const std::vector<std::string>& vocabulary();
int token_id(const std::string& token);  // throws std::out_of_range when unknown

// Per-seed relevance targets: 1 iff the seed point lies inside a box whose
// class name occurs among the utterance tokens.
std::vector<double> mentioned_class_targets(const Scene& scene, const Utterance& utt,
                                            const std::vector<double>& seed_pos);

// ---- dataset serialization (JSON lines) -----------------------------------

void write_dataset(const std::string& path, const std::vector<Sample>& samples);
// Throws std::runtime_error naming the 1-based line on malformed input.
std::vector<Sample> read_dataset(const std::string& path);

// ---- relation-word statistics ---------------------------------------------

using RelationLexicon = std::map<std::string, std::vector<std::string>>;
RelationLexicon default_lexicon();
// Plain text, one "category: phrase" per line; '#' comments allowed.
RelationLexicon read_lexicon(const std::string& path);

struct CorpusStats {
  long long n_sentences = 0;
  long long with0 = 0, with1 = 0, with2plus = 0;
  std::map<std::string, long long> phrase_counts;

  double ratio_at_least1() const {
    return n_sentences == 0 ? 0.0
                            : static_cast<double>(n_sentences - with0) / n_sentences;
  }
};

// Longest-match, case-insensitive, word-boundary phrase counting.
CorpusStats count_relation_words(const std::vector<std::string>& sentences,
                                 const RelationLexicon& lexicon);

}  // namespace rp3d
