#include "rp3d/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace rp3d {

namespace {

struct ClassSpec {
  const char* name;
  double sx_lo, sx_hi, sy_lo, sy_hi, sz_lo, sz_hi;
  bool elevatable;  // may sit on furniture instead of the floor
  double r, g, b;
};

const ClassSpec kClassTable[kNumClasses] = {
    {"chair", 6, 10, 6, 10, 8, 12, false, 0.70, 0.20, 0.20},
    {"table", 12, 20, 8, 14, 6, 10, false, 0.55, 0.35, 0.15},
    {"bed", 18, 26, 14, 20, 6, 10, false, 0.20, 0.35, 0.70},
    {"sofa", 16, 24, 8, 12, 8, 12, false, 0.25, 0.55, 0.25},
    {"shelf", 8, 14, 4, 8, 10, 16, true, 0.60, 0.45, 0.30},
    {"lamp", 3, 6, 3, 6, 8, 14, true, 0.90, 0.85, 0.40},
    {"monitor", 6, 10, 2, 4, 5, 8, true, 0.15, 0.15, 0.20},
    {"plant", 4, 8, 4, 8, 6, 12, true, 0.10, 0.60, 0.30},
};

double center_dist(const Box& a, const Box& b) {
  double dx = a.cx - b.cx, dy = a.cy - b.cy, dz = a.cz - b.cz;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Overlap test with a minimum separation: boxes clash unless some axis
// separates them by at least `gap`.
bool boxes_clash(const Box& a, const Box& b, double gap) {
  return std::abs(a.cx - b.cx) < (a.sx + b.sx) / 2 + gap &&
         std::abs(a.cy - b.cy) < (a.sy + b.sy) / 2 + gap &&
         std::abs(a.cz - b.cz) < (a.sz + b.sz) / 2 + gap;
}

void push_point(Scene& s, double x, double y, double z, double nx, double ny, double nz,
                double cr, double cg, double cb, double noise, Rng& rng) {
  s.coords.insert(s.coords.end(), {x, y, z});
  s.normals.insert(s.normals.end(), {nx, ny, nz});
  double c[3] = {cr, cg, cb};
  for (double& v : c) v = std::clamp(v + rng.normal(0.0, noise), 0.0, 1.0);
  s.colors.insert(s.colors.end(), {c[0], c[1], c[2]});
}

void sample_object_surface(Scene& s, const GtObject& o, int n, double noise, Rng& rng) {
  const Box& bx = o.box;
  const ClassSpec& spec = kClassTable[o.class_id];
  double ayz = bx.sy * bx.sz, axz = bx.sx * bx.sz, axy = bx.sx * bx.sy;
  double area[6] = {ayz, ayz, axz, axz, axy, axy};  // -x +x -y +y -z +z
  double total = 2 * (ayz + axz + axy);
  for (int k = 0; k < n; ++k) {
    double r = rng.uniform() * total;
    int face = 0;
    while (face < 5 && r >= area[face]) r -= area[face], ++face;
    double u = rng.uniform() - 0.5, v = rng.uniform() - 0.5;
    double x = bx.cx, y = bx.cy, z = bx.cz, nx = 0, ny = 0, nz = 0;
    switch (face) {
      case 0: x -= bx.sx / 2; y += u * bx.sy; z += v * bx.sz; nx = -1; break;
      case 1: x += bx.sx / 2; y += u * bx.sy; z += v * bx.sz; nx = 1; break;
      case 2: y -= bx.sy / 2; x += u * bx.sx; z += v * bx.sz; ny = -1; break;
      case 3: y += bx.sy / 2; x += u * bx.sx; z += v * bx.sz; ny = 1; break;
      case 4: z -= bx.sz / 2; x += u * bx.sx; y += v * bx.sy; nz = -1; break;
      default: z += bx.sz / 2; x += u * bx.sx; y += v * bx.sy; nz = 1; break;
    }
    push_point(s, x, y, z, nx, ny, nz, spec.r, spec.g, spec.b, noise, rng);
  }
}

// ---- base64 (raw little-endian float64 payload) ---------------------------

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    unsigned v = data[i] << 16;
    if (i + 1 < n) v |= data[i + 1] << 8;
    if (i + 2 < n) v |= data[i + 2];
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += i + 1 < n ? kB64Alphabet[(v >> 6) & 63] : '=';
    out += i + 2 < n ? kB64Alphabet[v & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> b64_decode(const std::string& s) {
  if (s.size() % 4 != 0) throw std::runtime_error("base64 length not a multiple of 4");
  static int rev[256];
  static bool init = false;
  if (!init) {
    std::fill(std::begin(rev), std::end(rev), -1);
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64Alphabet[i])] = i;
    init = true;
  }
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int pad = 0;
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      char c = s[i + k];
      if (c == '=') {
        if (i + 4 != s.size() || k < 2) throw std::runtime_error("base64 padding misplaced");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0 || rev[static_cast<unsigned char>(c)] < 0)
        throw std::runtime_error(std::string("bad base64 character '") + c + "'");
      v = (v << 6) | rev[static_cast<unsigned char>(c)];
    }
    out.push_back((v >> 16) & 0xff);
    if (pad < 2) out.push_back((v >> 8) & 0xff);
    if (pad < 1) out.push_back(v & 0xff);
  }
  return out;
}

std::string encode_doubles(const std::vector<double>& v) {
  return b64_encode(reinterpret_cast<const unsigned char*>(v.data()), v.size() * sizeof(double));
}

std::vector<double> decode_doubles(const std::string& s) {
  std::vector<unsigned char> bytes = b64_decode(s);
  if (bytes.size() % sizeof(double) != 0)
    throw std::runtime_error("payload is not a whole number of float64 values");
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

const char* class_name(int id) {
  if (id < 0 || id >= kNumClasses)
    throw std::out_of_range("class id " + std::to_string(id) + " outside [0, " +
                            std::to_string(kNumClasses - 1) + "]");
  return kClassTable[id].name;
}

int class_id(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (name == kClassTable[i].name) return i;
  return -1;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.id = static_cast<int>(seed % 1000000000ULL);

  int target_class = rng.uniform_int(0, kNumClasses - 1);
  int anchor_class = rng.uniform_int(0, kNumClasses - 2);
  if (anchor_class >= target_class) ++anchor_class;

  std::vector<int> classes(static_cast<std::size_t>(cfg.n_target_instances), target_class);
  classes.push_back(anchor_class);
  int n_extra = rng.uniform_int(0, cfg.max_extra_objects);
  for (int e = 0; e < n_extra; ++e) {
    int c = rng.uniform_int(0, kNumClasses - 2);  // anything but the anchor class
    if (c >= anchor_class) ++c;
    classes.push_back(c);
  }

  int attempts_left = 1000;
  for (int cid : classes) {
    const ClassSpec& spec = kClassTable[cid];
    while (true) {
      if (attempts_left-- <= 0)
        throw std::runtime_error("scene placement failed after 1000 attempts (seed " +
                                 std::to_string(seed) + ")");
      Box b;
      b.sx = rng.uniform(spec.sx_lo, spec.sx_hi);
      b.sy = rng.uniform(spec.sy_lo, spec.sy_hi);
      b.sz = rng.uniform(spec.sz_lo, spec.sz_hi);
      double z_base = 0.0;
      if (spec.elevatable && rng.uniform() < 0.5) z_base = rng.uniform(12.0, 28.0);
      b.cx = rng.uniform(b.sx / 2 + 1.0, cfg.room_x - b.sx / 2 - 1.0);
      b.cy = rng.uniform(b.sy / 2 + 1.0, cfg.room_y - b.sy / 2 - 1.0);
      b.cz = z_base + b.sz / 2;
      bool clash = false;
      for (const GtObject& placed : scene.objects)
        if (boxes_clash(b, placed.box, cfg.placement_gap)) {
          clash = true;
          break;
        }
      if (!clash) {
        scene.objects.push_back({cid, b});
        break;
      }
    }
  }

  for (const GtObject& o : scene.objects)
    sample_object_surface(scene, o, cfg.points_per_object, cfg.color_noise, rng);
  for (int k = 0; k < cfg.floor_points; ++k) {
    double x = rng.uniform(0.0, cfg.room_x), y = rng.uniform(0.0, cfg.room_y);
    push_point(scene, x, y, 0.0, 0, 0, 1, 0.5, 0.5, 0.5, cfg.color_noise, rng);
  }
  return scene;
}

const std::vector<std::string>& relation_tags() {
  static const std::vector<std::string> tags = {"left", "right", "front", "behind",
                                               "above", "below", "closest", "farthest"};
  return tags;
}

bool relation_holds(const Scene& scene, int obj, const std::string& relation, int anchor,
                    double margin) {
  const Box& o = scene.objects.at(static_cast<std::size_t>(obj)).box;
  const Box& a = scene.objects.at(static_cast<std::size_t>(anchor)).box;
  if (relation == "left") return o.cx <= a.cx - margin;
  if (relation == "right") return o.cx >= a.cx + margin;
  if (relation == "front") return o.cy <= a.cy - margin;
  if (relation == "behind") return o.cy >= a.cy + margin;
  if (relation == "above") return o.cz >= a.cz + margin;
  if (relation == "below") return o.cz <= a.cz - margin;
  if (relation == "closest" || relation == "farthest") {
    int cls = scene.objects[static_cast<std::size_t>(obj)].class_id;
    double d = center_dist(o, a);
    for (int i = 0; i < static_cast<int>(scene.objects.size()); ++i) {
      if (i == obj || scene.objects[static_cast<std::size_t>(i)].class_id != cls) continue;
      double di = center_dist(scene.objects[static_cast<std::size_t>(i)].box, a);
      if (relation == "closest" ? d > di - margin : d < di + margin) return false;
    }
    return true;
  }
  throw std::invalid_argument("unknown relation '" + relation + "'");
}

std::vector<int> satisfying_objects(const Scene& scene, int target_class,
                                    const std::string& relation, int anchor, double margin) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(scene.objects.size()); ++i) {
    if (i == anchor || scene.objects[static_cast<std::size_t>(i)].class_id != target_class)
      continue;
    if (relation_holds(scene, i, relation, anchor, margin)) out.push_back(i);
  }
  return out;
}

namespace {

// Opposite side of each directional relation; superlatives have none.
std::string mirror_relation(const std::string& rel) {
  if (rel == "left") return "right";
  if (rel == "right") return "left";
  if (rel == "front") return "behind";
  if (rel == "behind") return "front";
  if (rel == "above") return "below";
  if (rel == "below") return "above";
  return "";
}

std::vector<std::string> relation_phrase(const std::string& rel) {
  if (rel == "left") return {"left", "of"};
  if (rel == "right") return {"right", "of"};
  if (rel == "front") return {"in", "front", "of"};
  if (rel == "behind") return {"behind"};
  if (rel == "above") return {"above"};
  if (rel == "below") return {"below"};
  if (rel == "closest") return {"closest", "to"};
  return {"farthest", "from"};
}

}  // namespace

Utterance generate_utterance(const Scene& scene, std::uint64_t seed, double margin) {
  std::vector<int> class_count(kNumClasses, 0);
  for (const GtObject& o : scene.objects) ++class_count[static_cast<std::size_t>(o.class_id)];

  struct Triple {
    int target, anchor;
    std::string relation;
  };
  std::vector<Triple> valid;
  for (int anchor = 0; anchor < static_cast<int>(scene.objects.size()); ++anchor) {
    int acls = scene.objects[static_cast<std::size_t>(anchor)].class_id;
    if (class_count[static_cast<std::size_t>(acls)] != 1) continue;  // anchor must be nameable
    for (int tcls = 0; tcls < kNumClasses; ++tcls) {
      if (tcls == acls || class_count[static_cast<std::size_t>(tcls)] < 2) continue;
      for (const std::string& rel : relation_tags()) {
        std::vector<int> sats = satisfying_objects(scene, tcls, rel, anchor, margin);
        if (sats.size() != 1) continue;
        std::string mrel = mirror_relation(rel);
        if (!mrel.empty()) {
          // Directional: every distractor must sit clearly on the opposite side.
          bool clean = true;
          for (int i = 0; i < static_cast<int>(scene.objects.size()) && clean; ++i) {
            if (i == sats[0] || scene.objects[static_cast<std::size_t>(i)].class_id != tcls)
              continue;
            clean = relation_holds(scene, i, mrel, anchor, margin);
          }
          if (!clean) continue;
        }
        valid.push_back({sats[0], anchor, rel});
      }
    }
  }
  if (valid.empty())
    throw std::runtime_error("scene " + std::to_string(scene.id) +
                             " admits no unambiguous utterance");

  Rng rng(seed);
  const Triple& pick = valid[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(valid.size()) - 1))];

  Utterance utt;
  utt.target = pick.target;
  utt.anchor = pick.anchor;
  utt.relation = pick.relation;
  utt.target_class = scene.objects[static_cast<std::size_t>(pick.target)].class_id;
  utt.tokens = {"the", class_name(utt.target_class)};
  for (const std::string& w : relation_phrase(pick.relation)) utt.tokens.push_back(w);
  utt.tokens.push_back("the");
  utt.tokens.push_back(class_name(scene.objects[static_cast<std::size_t>(pick.anchor)].class_id));
  return utt;
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"the"};
    for (int i = 0; i < kNumClasses; ++i) v.push_back(kClassTable[i].name);
    for (const char* w : {"left", "right", "of", "in", "front", "behind", "above", "below",
                          "closest", "to", "farthest", "from"})
      v.push_back(w);
    return v;
  }();
  return vocab;
}

int token_id(const std::string& token) {
  const std::vector<std::string>& v = vocabulary();
  for (int i = 0; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] == token) return i;
  throw std::out_of_range("token '" + token + "' is not in the vocabulary");
}

std::vector<double> mentioned_class_targets(const Scene& scene, const Utterance& utt,
                                            const std::vector<double>& seed_pos) {
  if (seed_pos.size() % 3 != 0)
    throw std::invalid_argument("seed positions must be flat xyz triples");
  std::vector<bool> mentioned(kNumClasses, false);
  for (const std::string& tok : utt.tokens) {
    int c = class_id(tok);
    if (c >= 0) mentioned[static_cast<std::size_t>(c)] = true;
  }
  int n = static_cast<int>(seed_pos.size() / 3);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double x = seed_pos[static_cast<std::size_t>(i) * 3];
    double y = seed_pos[static_cast<std::size_t>(i) * 3 + 1];
    double z = seed_pos[static_cast<std::size_t>(i) * 3 + 2];
    for (const GtObject& o : scene.objects)
      if (mentioned[static_cast<std::size_t>(o.class_id)] && point_in_box(x, y, z, o.box)) {
        out[static_cast<std::size_t>(i)] = 1.0;
        break;
      }
  }
  return out;
}

// ---- dataset serialization -------------------------------------------------

void write_dataset(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const Sample& s : samples) {
    nlohmann::json j;
    j["scene_id"] = s.scene.id;
    j["seed"] = s.scene.seed;
    j["points"] = {{"n", s.scene.n_points()},
                   {"coords", encode_doubles(s.scene.coords)},
                   {"colors", encode_doubles(s.scene.colors)},
                   {"normals", encode_doubles(s.scene.normals)}};
    nlohmann::json objs = nlohmann::json::array();
    for (const GtObject& o : s.scene.objects) {
      const Box& b = o.box;
      objs.push_back({{"class", class_name(o.class_id)},
                      {"box", {b.cx, b.cy, b.cz, b.sx, b.sy, b.sz}}});
    }
    j["objects"] = std::move(objs);
    j["utterance"] = {{"tokens", s.utterance.tokens},
                      {"target", s.utterance.target},
                      {"anchor", s.utterance.anchor},
                      {"relation", s.utterance.relation},
                      {"target_class", class_name(s.utterance.target_class)}};
    f << j.dump() << '\n';
  }
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<Sample> read_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<Sample> out;
  std::string line;
  long long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      Sample s;
      s.scene.id = j.at("scene_id").get<int>();
      s.scene.seed = j.at("seed").get<std::uint64_t>();
      const nlohmann::json& pts = j.at("points");
      int n = pts.at("n").get<int>();
      s.scene.coords = decode_doubles(pts.at("coords").get<std::string>());
      s.scene.colors = decode_doubles(pts.at("colors").get<std::string>());
      s.scene.normals = decode_doubles(pts.at("normals").get<std::string>());
      if (s.scene.coords.size() != static_cast<std::size_t>(n) * 3 ||
          s.scene.colors.size() != s.scene.coords.size() ||
          s.scene.normals.size() != s.scene.coords.size())
        throw std::runtime_error("point payload sizes disagree with n=" + std::to_string(n));
      for (const nlohmann::json& jo : j.at("objects")) {
        GtObject o;
        std::string cname = jo.at("class").get<std::string>();
        o.class_id = class_id(cname);
        if (o.class_id < 0) throw std::runtime_error("unknown class '" + cname + "'");
        const nlohmann::json& jb = jo.at("box");
        if (jb.size() != 6) throw std::runtime_error("box needs 6 numbers");
        o.box = {jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(),
                 jb[3].get<double>(), jb[4].get<double>(), jb[5].get<double>()};
        s.scene.objects.push_back(o);
      }
      const nlohmann::json& ju = j.at("utterance");
      s.utterance.tokens = ju.at("tokens").get<std::vector<std::string>>();
      s.utterance.target = ju.at("target").get<int>();
      s.utterance.anchor = ju.at("anchor").get<int>();
      s.utterance.relation = ju.at("relation").get<std::string>();
      std::string tcname = ju.at("target_class").get<std::string>();
      s.utterance.target_class = class_id(tcname);
      if (s.utterance.target_class < 0)
        throw std::runtime_error("unknown target class '" + tcname + "'");
      int nobj = static_cast<int>(s.scene.objects.size());
      if (s.utterance.target < 0 || s.utterance.target >= nobj || s.utterance.anchor < 0 ||
          s.utterance.anchor >= nobj)
        throw std::runtime_error("utterance object indices out of range");
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error("bad dataset record at line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return out;
}

// ---- relation-word statistics ----------------------------------------------

RelationLexicon default_lexicon() {
  return {
      {"left", {"left of", "to the left of", "left"}},
      {"right", {"right of", "to the right of", "right"}},
      {"front", {"in front of", "front of"}},
      {"behind", {"behind", "at the back of"}},
      {"above", {"above", "over", "on top of"}},
      {"below", {"below", "under", "beneath", "underneath"}},
      {"closest", {"closest to", "nearest to", "next to", "closest", "nearest", "beside", "near"}},
      {"farthest", {"farthest from", "furthest from", "farthest", "furthest"}},
  };
}

RelationLexicon read_lexicon(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  RelationLexicon lex;
  std::string line;
  long long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::size_t colon = line.find(':');
    if (colon == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error("lexicon line " + std::to_string(lineno) +
                                 " has no 'category: phrase' separator");
      continue;
    }
    auto trim = [](std::string s) {
      std::size_t a = s.find_first_not_of(" \t\r");
      std::size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string cat = trim(line.substr(0, colon));
    std::string phrase = trim(line.substr(colon + 1));
    if (cat.empty() || phrase.empty())
      throw std::runtime_error("lexicon line " + std::to_string(lineno) +
                               " has an empty category or phrase");
    lex[lower(cat)].push_back(lower(phrase));
  }
  return lex;
}

CorpusStats count_relation_words(const std::vector<std::string>& sentences,
                                 const RelationLexicon& lexicon) {
  std::size_t n_phrases = 0;
  for (const auto& [cat, phrases] : lexicon) n_phrases += phrases.size();
  if (n_phrases == 0) throw std::invalid_argument("relation lexicon is empty");

  struct Entry {
    std::vector<std::string> words;
    std::string phrase;
  };
  std::vector<Entry> entries;
  for (const auto& [cat, phrases] : lexicon)
    for (const std::string& p : phrases) {
      Entry e{word_tokens(p), lower(p)};
      if (e.words.empty())
        throw std::invalid_argument("lexicon phrase '" + p + "' has no words");
      entries.push_back(std::move(e));
    }
  // Longest phrase wins at each position; ties resolved alphabetically.
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.words.size() != b.words.size()) return a.words.size() > b.words.size();
    return a.phrase < b.phrase;
  });

  CorpusStats stats;
  for (const std::string& sentence : sentences) {
    std::vector<std::string> toks = word_tokens(sentence);
    int hits = 0;
    std::size_t pos = 0;
    while (pos < toks.size()) {
      const Entry* found = nullptr;
      for (const Entry& e : entries) {
        if (pos + e.words.size() > toks.size()) continue;
        if (std::equal(e.words.begin(), e.words.end(), toks.begin() + static_cast<long>(pos))) {
          found = &e;
          break;
        }
      }
      if (found) {
        ++hits;
        ++stats.phrase_counts[found->phrase];
        pos += found->words.size();
      } else {
        ++pos;
      }
    }
    ++stats.n_sentences;
    if (hits == 0)
      ++stats.with0;
    else if (hits == 1)
      ++stats.with1;
    else
      ++stats.with2plus;
  }
  return stats;
}

}  // namespace rp3d
