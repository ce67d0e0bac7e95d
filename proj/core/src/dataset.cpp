#include "coar/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "coar/tensor_io.hpp"

namespace coar {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

std::string format_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_semantics_csv(const fs::path& path, const Tensor& cs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int i = 0; i < cs.rows(); ++i) {
    for (int j = 0; j < cs.cols(); ++j) {
      if (j) out << ',';
      out << format_decimal(cs.at(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Tensor read_semantics_csv(const fs::path& path, int rows, int cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Tensor cs({rows, cols});
  std::string line;
  int r = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (r >= rows) throw std::runtime_error(path.string() + ": more rows than manifest declares");
    int c = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, comma, v);
      if (ec != std::errc() || ptr != comma) {
        throw std::runtime_error(path.string() + ": bad number on row " + std::to_string(r));
      }
      if (c >= cols) throw std::runtime_error(path.string() + ": too many columns on row " + std::to_string(r));
      cs.at(r, c++) = v;
      p = comma + 1;
      if (comma == end) break;
    }
    if (c != cols) throw std::runtime_error(path.string() + ": expected " + std::to_string(cols) + " columns");
    ++r;
  }
  if (r != rows) throw std::runtime_error(path.string() + ": expected " + std::to_string(rows) + " rows");
  return cs;
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::runtime_error("unknown split '" + s + "'");
}

}  // namespace

bool Dataset::is_seen(int label) const {
  return std::find(seen_classes.begin(), seen_classes.end(), label) != seen_classes.end();
}

std::vector<int> Dataset::sample_indices(Split split, bool seen) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split && is_seen(samples[i].label) == seen) out.push_back(static_cast<int>(i));
  }
  return out;
}

void Dataset::validate() const {
  semantics.validate();
  if (semantics.num_classes() != num_classes || semantics.num_attributes() != num_attributes) {
    throw std::invalid_argument("semantics table does not match dataset class/attribute counts");
  }
  std::set<int> seen(seen_classes.begin(), seen_classes.end());
  std::set<int> unseen(unseen_classes.begin(), unseen_classes.end());
  if (seen.size() != seen_classes.size() || unseen.size() != unseen_classes.size()) {
    throw std::invalid_argument("duplicate class in seen/unseen list");
  }
  for (int c : unseen) {
    if (seen.contains(c)) throw std::invalid_argument("class " + std::to_string(c) + " is both seen and unseen");
  }
  for (int c : seen) {
    if (c < 0 || c >= num_classes) throw std::invalid_argument("seen class out of range");
  }
  for (int c : unseen) {
    if (c < 0 || c >= num_classes) throw std::invalid_argument("unseen class out of range");
  }
  for (const Sample& s : samples) {
    const bool in_seen = seen.contains(s.label);
    if (!in_seen && !unseen.contains(s.label)) {
      throw std::invalid_argument("label " + std::to_string(s.label) + " outside the class partition");
    }
    if (s.split == Split::Train && !in_seen) {
      throw std::invalid_argument("training sample with unseen label " + std::to_string(s.label));
    }
  }
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir / "samples");
  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["num_classes"] = dataset.num_classes;
  manifest["num_attributes"] = dataset.num_attributes;
  manifest["image_size"] = dataset.image_size;
  manifest["channels"] = dataset.channels;
  manifest["seen_classes"] = dataset.seen_classes;
  manifest["unseen_classes"] = dataset.unseen_classes;
  manifest["attribute_semantics_mode"] = to_string(dataset.semantics.mode);
  manifest["class_semantics"] = "class_semantics.csv";
  manifest["attribute_semantics"] = "attribute_semantics.coar";
  json samples = json::array();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "samples/%06zu.coar", i);
    const Sample& s = dataset.samples[i];
    write_tensor(dir / name, s.image);
    samples.push_back({{"file", name}, {"label", s.label}, {"split", split_name(s.split)}});
  }
  manifest["samples"] = std::move(samples);
  if (dataset.layout) {
    const GlyphLayout& l = *dataset.layout;
    manifest["glyph_layout"] = {{"grid", l.grid},
                                {"cell_size", l.cell_size},
                                {"margin", l.margin},
                                {"class_cells", l.class_cells},
                                {"glyphs", "glyphs.coar"}};
    write_tensor(dir / "glyphs.coar", l.glyphs);
  }
  write_semantics_csv(dir / "class_semantics.csv", dataset.semantics.class_semantics);
  write_tensor(dir / "attribute_semantics.coar", dataset.semantics.attribute_semantics);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  const json manifest = json::parse(in);
  if (manifest.at("format_version").get<int>() != kManifestVersion) {
    throw std::runtime_error("unsupported manifest version");
  }
  Dataset d;
  d.num_classes = manifest.at("num_classes").get<int>();
  d.num_attributes = manifest.at("num_attributes").get<int>();
  d.image_size = manifest.at("image_size").get<int>();
  d.channels = manifest.at("channels").get<int>();
  d.seen_classes = manifest.at("seen_classes").get<std::vector<int>>();
  d.unseen_classes = manifest.at("unseen_classes").get<std::vector<int>>();
  d.semantics.mode = parse_semantics_mode(manifest.at("attribute_semantics_mode").get<std::string>());
  d.semantics.class_semantics =
      read_semantics_csv(dir / manifest.at("class_semantics").get<std::string>(), d.num_classes, d.num_attributes);
  d.semantics.attribute_semantics = read_tensor(dir / manifest.at("attribute_semantics").get<std::string>());
  d.semantics.attribute_semantics.set_dtype(DType::F64);
  for (const json& s : manifest.at("samples")) {
    Sample sample;
    sample.image = read_tensor(dir / s.at("file").get<std::string>());
    const auto& shape = sample.image.shape();
    if (shape != std::vector<int>{d.image_size, d.image_size, d.channels}) {
      throw std::runtime_error("sample " + s.at("file").get<std::string>() + " has shape " + shape_string(shape));
    }
    sample.label = s.at("label").get<int>();
    sample.split = parse_split(s.at("split").get<std::string>());
    d.samples.push_back(std::move(sample));
  }
  if (manifest.contains("glyph_layout")) {
    const json& l = manifest["glyph_layout"];
    GlyphLayout layout;
    layout.grid = l.at("grid").get<int>();
    layout.cell_size = l.at("cell_size").get<int>();
    layout.margin = l.at("margin").get<int>();
    layout.class_cells = l.at("class_cells").get<std::vector<std::vector<int>>>();
    layout.glyphs = read_tensor(dir / l.at("glyphs").get<std::string>());
    d.layout = std::move(layout);
  }
  d.validate();
  return d;
}

}  // namespace coar
