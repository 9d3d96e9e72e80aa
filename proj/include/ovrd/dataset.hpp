#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovrd/geometry.hpp"
#include "ovrd/tensor_io.hpp"

namespace ovrd {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::size_t kRoiFeatureDim = 2048;

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Category {
  std::string name;
  bool novel = false;
};

/// Ordered category list with base/novel flags. Ids are positions in the
/// list; the base subset keeps list order.
struct Vocabulary {
  std::vector<Category> items;

  std::size_t size() const { return items.size(); }
  const std::string& name(int id) const { return items.at(id).name; }
  bool is_novel(int id) const { return items.at(id).novel; }

  std::optional<int> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].name == name) return static_cast<int>(i);
    return std::nullopt;
  }

  std::vector<int> base_ids() const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!items[i].novel) ids.push_back(static_cast<int>(i));
    return ids;
  }

  std::vector<std::string> base_names() const {
    std::vector<std::string> names;
    for (const auto& c : items)
      if (!c.novel) names.push_back(c.name);
    return names;
  }

  std::vector<std::string> all_names() const {
    std::vector<std::string> names;
    for (const auto& c : items) names.push_back(c.name);
    return names;
  }
};

struct VideoEntry {
  std::string id;
  fs::path tracklets;
  fs::path annotations;
  fs::path embeddings;  // empty when the dataset carries no VLM embeddings
};

/// Dataset manifest: the vocabularies plus one entry per video. All paths in
/// the manifest file are relative to the manifest's directory.
struct DatasetManifest {
  fs::path root;
  std::vector<VideoEntry> videos;
  Vocabulary objects;
  Vocabulary predicates;

  static DatasetManifest load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("manifest: cannot open " + path.string());
    json doc;
    try {
      doc = json::parse(f);
    } catch (const json::exception& e) {
      throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.root = path.parent_path();
    auto read_vocab = [&](const char* key) {
      Vocabulary v;
      std::set<std::string> seen;
      for (const auto& item : doc.at(key)) {
        Category c{item.at("name").get<std::string>(), item.at("novel").get<bool>()};
        if (!seen.insert(c.name).second)
          throw ParseError("manifest: duplicate category name '" + c.name + "'");
        v.items.push_back(std::move(c));
      }
      return v;
    };
    m.objects = read_vocab("objects");
    m.predicates = read_vocab("predicates");
    std::set<std::string> vids;
    for (const auto& item : doc.at("videos")) {
      VideoEntry e;
      e.id = item.at("id").get<std::string>();
      if (!vids.insert(e.id).second)
        throw ParseError("manifest: duplicate video id '" + e.id + "'");
      e.tracklets = m.root / item.at("tracklets").get<std::string>();
      e.annotations = m.root / item.at("annotations").get<std::string>();
      if (item.contains("embeddings"))
        e.embeddings = m.root / item.at("embeddings").get<std::string>();
      m.videos.push_back(std::move(e));
    }
    m.validate();
    return m;
  }

  void validate() const {
    for (const auto& e : videos) {
      if (!fs::exists(e.tracklets))
        throw ParseError("manifest: missing tracklet file " + e.tracklets.string());
      if (!fs::exists(e.annotations))
        throw ParseError("manifest: missing annotation file " +
                         e.annotations.string());
      if (!e.embeddings.empty() && !fs::exists(e.embeddings))
        throw ParseError("manifest: missing embedding file " +
                         e.embeddings.string());
    }
  }
};

/// One ground-truth ⟨subject, predicate, object⟩ instance. Ids reference
/// tracklets in the video's tracklet file; class fields are vocabulary ids.
struct GtRelation {
  std::int64_t sub_id = 0;
  std::int64_t obj_id = 0;
  int predicate = -1;
  int sub_cls = -1;
  int obj_cls = -1;
};

struct VideoGroundTruth {
  std::string video;
  std::vector<GtRelation> relations;
  std::map<std::int64_t, int> tracklet_cls;  // gt tracklet id -> object class
};

// ---------------------------------------------------------------------------
// Tracklet records (line-delimited JSON)
// ---------------------------------------------------------------------------

namespace detail {

inline json parse_line(const std::string& line, const fs::path& path, int lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " +
                     e.what());
  }
}

}  // namespace detail

/// Loads tracklets from a line-delimited record file and attaches the 2048-d
/// RoI feature referenced by each record's (file, row) pair. Order follows
/// the file. Feature paths resolve relative to the record file's directory.
inline std::vector<Tracklet> load_tracklets(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("load_tracklets: cannot open " + path.string());
  std::vector<Tracklet> out;
  std::map<std::string, TensorData> feature_files;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = detail::parse_line(line, path, lineno);
    auto fail = [&](const std::string& msg) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
    };
    Tracklet t;
    try {
      t.id = rec.at("id").get<std::int64_t>();
      t.video = rec.at("video").get<std::string>();
      t.start_frame = rec.at("start_frame").get<std::int64_t>();
      for (const auto& b : rec.at("boxes")) {
        if (!b.is_array() || b.size() != 4) fail("box is not [x1,y1,x2,y2]");
        BBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                 b[3].get<double>()};
        if (box.x2 < box.x1) fail("box invariant violated: x2 < x1");
        if (box.y2 < box.y1) fail("box invariant violated: y2 < y1");
        t.boxes.push_back(box);
      }
      if (t.boxes.empty()) fail("tracklet has no boxes");
      const auto& ref = rec.at("feature_ref");
      std::string file = ref.at("file").get<std::string>();
      std::uint64_t row = ref.at("row").get<std::uint64_t>();
      auto it = feature_files.find(file);
      if (it == feature_files.end()) {
        TensorData td = read_tensor(path.parent_path() / file);
        if (td.shape.size() != 2) fail("feature tensor " + file + " is not 2-d");
        it = feature_files.emplace(file, std::move(td)).first;
      }
      const TensorData& td = it->second;
      if (td.cols() != kRoiFeatureDim)
        fail("feature dimension is " + std::to_string(td.cols()) +
             ", expected " + std::to_string(kRoiFeatureDim));
      if (row >= td.rows()) fail("feature_ref row out of range");
      const float* begin = td.values.data() + row * td.cols();
      t.roi_feature.assign(begin, begin + td.cols());
    } catch (const json::exception& e) {
      fail(e.what());
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Attaches row i of the embedding tensor to tracklet i (file order).
inline void attach_vlm_embeddings(std::vector<Tracklet>& tracklets,
                                  const fs::path& tensor_path) {
  TensorData td = read_tensor(tensor_path);
  if (td.shape.size() != 2 || td.rows() != tracklets.size())
    throw ParseError("attach_vlm_embeddings: tensor " + tensor_path.string() +
                     " does not have one row per tracklet");
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    const float* begin = td.values.data() + i * td.cols();
    tracklets[i].vlm_embedding.assign(begin, begin + td.cols());
  }
}

/// Loads annotations and resolves them against the vocabularies and the
/// video's tracklets. Duplicate identical triplets are kept as distinct
/// instances (multi-label data).
inline VideoGroundTruth load_annotations(const fs::path& path,
                                         const Vocabulary& objects,
                                         const Vocabulary& predicates,
                                         const std::vector<Tracklet>& tracklets) {
  std::ifstream f(path);
  if (!f) throw ParseError("load_annotations: cannot open " + path.string());
  std::set<std::int64_t> ids;
  for (const auto& t : tracklets) ids.insert(t.id);
  VideoGroundTruth gt;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = detail::parse_line(line, path, lineno);
    auto fail = [&](const std::string& msg) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
    };
    try {
      GtRelation r;
      std::string video = rec.at("video").get<std::string>();
      if (gt.video.empty()) gt.video = video;
      r.sub_id = rec.at("sub_id").get<std::int64_t>();
      r.obj_id = rec.at("obj_id").get<std::int64_t>();
      if (!ids.count(r.sub_id))
        fail("sub_id " + std::to_string(r.sub_id) + " references no tracklet");
      if (!ids.count(r.obj_id))
        fail("obj_id " + std::to_string(r.obj_id) + " references no tracklet");
      auto pred = predicates.index_of(rec.at("predicate").get<std::string>());
      if (!pred) fail("unknown predicate '" + rec.at("predicate").get<std::string>() + "'");
      auto sub_cls = objects.index_of(rec.at("sub_cls").get<std::string>());
      if (!sub_cls) fail("unknown object category '" + rec.at("sub_cls").get<std::string>() + "'");
      auto obj_cls = objects.index_of(rec.at("obj_cls").get<std::string>());
      if (!obj_cls) fail("unknown object category '" + rec.at("obj_cls").get<std::string>() + "'");
      r.predicate = *pred;
      r.sub_cls = *sub_cls;
      r.obj_cls = *obj_cls;
      for (auto [id, cls] : {std::pair{r.sub_id, r.sub_cls}, {r.obj_id, r.obj_cls}}) {
        auto [it, inserted] = gt.tracklet_cls.emplace(id, cls);
        if (!inserted && it->second != cls)
          fail("tracklet " + std::to_string(id) + " annotated with two classes");
      }
      gt.relations.push_back(r);
    } catch (const json::exception& e) {
      fail(e.what());
    }
  }
  return gt;
}

struct LoadedVideo {
  std::string id;
  std::vector<Tracklet> tracklets;
  VideoGroundTruth gt;

  const Tracklet* tracklet_by_id(std::int64_t id) const {
    for (const auto& t : tracklets)
      if (t.id == id) return &t;
    return nullptr;
  }
};

inline LoadedVideo load_video(const DatasetManifest& m, const VideoEntry& e) {
  LoadedVideo v;
  v.id = e.id;
  v.tracklets = load_tracklets(e.tracklets);
  if (!e.embeddings.empty()) attach_vlm_embeddings(v.tracklets, e.embeddings);
  v.gt = load_annotations(e.annotations, m.objects, m.predicates, v.tracklets);
  v.gt.video = e.id;
  return v;
}

inline std::vector<LoadedVideo> load_dataset(const DatasetManifest& m) {
  std::vector<LoadedVideo> out;
  out.reserve(m.videos.size());
  for (const auto& e : m.videos) out.push_back(load_video(m, e));
  return out;
}

// ---------------------------------------------------------------------------
// Writers (used by the synthetic generator and tests)
// ---------------------------------------------------------------------------

/// Writes tracklet records plus their RoI feature tensor (one row per
/// tracklet, record order). `feature_file` is relative to `path`'s directory.
inline void write_tracklets(const fs::path& path,
                            const std::vector<Tracklet>& tracklets,
                            const std::string& feature_file) {
  std::vector<float> rows;
  rows.reserve(tracklets.size() * kRoiFeatureDim);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_tracklets: cannot open " + path.string());
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    const Tracklet& t = tracklets[i];
    if (t.roi_feature.size() != kRoiFeatureDim)
      throw std::invalid_argument("write_tracklets: tracklet " +
                                  std::to_string(t.id) + " has feature dim " +
                                  std::to_string(t.roi_feature.size()));
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    json rec{{"id", t.id},
             {"video", t.video},
             {"start_frame", t.start_frame},
             {"boxes", boxes},
             {"feature_ref", {{"file", feature_file}, {"row", i}}}};
    f << rec.dump() << "\n";
    for (double x : t.roi_feature) rows.push_back(static_cast<float>(x));
  }
  std::vector<std::uint64_t> shape{tracklets.size(), kRoiFeatureDim};
  write_tensor(path.parent_path() / feature_file, shape, rows);
}

/// Writes the optional per-tracklet VLM embedding tensor (row per tracklet).
inline void write_vlm_embeddings(const fs::path& tensor_path,
                                 const std::vector<Tracklet>& tracklets) {
  if (tracklets.empty()) {
    write_tensor(tensor_path, std::vector<std::uint64_t>{0, 0}, {});
    return;
  }
  std::size_t dim = tracklets.front().vlm_embedding.size();
  std::vector<float> rows;
  rows.reserve(tracklets.size() * dim);
  for (const auto& t : tracklets) {
    if (t.vlm_embedding.size() != dim)
      throw std::invalid_argument("write_vlm_embeddings: inconsistent dims");
    for (double x : t.vlm_embedding) rows.push_back(static_cast<float>(x));
  }
  std::vector<std::uint64_t> shape{tracklets.size(), dim};
  write_tensor(tensor_path, shape, rows);
}

inline void write_annotations(const fs::path& path, const std::string& video,
                              const std::vector<GtRelation>& relations,
                              const Vocabulary& objects,
                              const Vocabulary& predicates) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_annotations: cannot open " + path.string());
  for (const auto& r : relations) {
    json rec{{"video", video},
             {"sub_id", r.sub_id},
             {"obj_id", r.obj_id},
             {"predicate", predicates.name(r.predicate)},
             {"sub_cls", objects.name(r.sub_cls)},
             {"obj_cls", objects.name(r.obj_cls)}};
    f << rec.dump() << "\n";
  }
}

inline void write_manifest(const fs::path& path, const Vocabulary& objects,
                           const Vocabulary& predicates,
                           const std::vector<VideoEntry>& videos) {
  json doc;
  auto vocab_json = [](const Vocabulary& v) {
    json arr = json::array();
    for (const auto& c : v.items) arr.push_back({{"name", c.name}, {"novel", c.novel}});
    return arr;
  };
  doc["objects"] = vocab_json(objects);
  doc["predicates"] = vocab_json(predicates);
  json vids = json::array();
  fs::path root = path.parent_path();
  for (const auto& e : videos) {
    json v{{"id", e.id},
           {"tracklets", fs::relative(e.tracklets, root).generic_string()},
           {"annotations", fs::relative(e.annotations, root).generic_string()}};
    if (!e.embeddings.empty())
      v["embeddings"] = fs::relative(e.embeddings, root).generic_string();
    vids.push_back(std::move(v));
  }
  doc["videos"] = std::move(vids);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_manifest: cannot open " + path.string());
  f << doc.dump(2) << "\n";
}

}  // namespace ovrd
