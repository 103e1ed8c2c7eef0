#include "cxrclip/study.hpp"

#include <fstream>

#include <json.hpp>

#include "cxrclip/errors.hpp"

namespace cxrclip {

using nlohmann::json;

std::optional<View> parse_view(std::string_view text) {
  if (text == "AP") return View::AP;
  if (text == "PA") return View::PA;
  if (text == "LATERAL" || text == "LL" || text == "LAT") return View::LATERAL;
  if (text == "UNKNOWN" || text.empty()) return View::UNKNOWN;
  return std::nullopt;
}

std::string_view to_string(View v) {
  switch (v) {
    case View::AP:
      return "AP";
    case View::PA:
      return "PA";
    case View::LATERAL:
      return "LATERAL";
    case View::UNKNOWN:
      return "UNKNOWN";
  }
  return "UNKNOWN";
}

void validate(const Study& study) {
  if (study.images.empty()) throw NoImages("study " + study.id + " has no images");
  const bool has_labels = study.labels && !study.labels->empty();
  if (!study.has_findings() && !study.has_impression() && !has_labels) {
    throw NoText("study " + study.id + " has neither report sections nor labels");
  }
}

namespace {

Image inline_pixels(const json& rows) {
  if (!rows.is_array() || rows.empty() || !rows.front().is_array()) {
    throw DataError("inline pixels must be a non-empty list of rows");
  }
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size());
  Image img(h, w);
  for (int r = 0; r < h; ++r) {
    const json& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != w) throw DataError("ragged inline pixel rows");
    for (int c = 0; c < w; ++c) {
      const double v = row[static_cast<std::size_t>(c)].get<double>();
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("inline pixel outside [0, 1]");
      img.at(r, c) = v;
    }
  }
  return img;
}

std::optional<std::string> optional_text(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

Study parse_study(const json& j, const std::filesystem::path& base, const prompt::PromptGrammar* grammar) {
  Study s;
  s.id = j.at("id").get<std::string>();
  for (const json& im : j.at("images")) {
    StudyImage si;
    const std::string view = im.value("view", "UNKNOWN");
    auto v = parse_view(view);
    if (!v) throw DataError("unknown view '" + view + "'");
    si.view = *v;
    if (im.contains("path")) {
      si.path = im.at("path").get<std::string>();
      si.pixels = read_pgm(base / si.path);
    } else if (im.contains("pixels")) {
      si.pixels = inline_pixels(im.at("pixels"));
    } else {
      throw DataError("image entry needs 'path' or 'pixels'");
    }
    s.images.push_back(std::move(si));
  }
  s.findings = optional_text(j, "findings");
  s.impression = optional_text(j, "impression");
  if (auto it = j.find("labels"); it != j.end() && !it->is_null()) {
    prompt::LabelRecord labels;
    for (const auto& [name, value] : it->items()) {
      auto lv = prompt::parse_label_value(value.get<std::string>());
      if (!lv) throw DataError("bad label value for '" + name + "'");
      if (grammar != nullptr && !grammar->knows_class(name)) {
        throw DataError("unknown class '" + name + "'");
      }
      labels.emplace(name, *lv);
    }
    s.labels = std::move(labels);
  }
  validate(s);
  return s;
}

}  // namespace

std::vector<Study> read_studies(const std::filesystem::path& path, const prompt::PromptGrammar* grammar) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  const auto base = path.parent_path();
  std::vector<Study> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_study(json::parse(line), base, grammar));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_studies(const std::filesystem::path& path, const std::vector<Study>& studies) {
  const auto base = path.parent_path();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const Study& s : studies) {
    json j;
    j["id"] = s.id;
    json images = json::array();
    for (const StudyImage& im : s.images) {
      json e;
      if (!im.path.empty()) {
        const auto file = base / im.path;
        std::filesystem::create_directories(file.parent_path());
        write_pgm(file, im.pixels);
        e["path"] = im.path;
      } else {
        json rows = json::array();
        for (int r = 0; r < im.pixels.height; ++r) {
          json row = json::array();
          for (int c = 0; c < im.pixels.width; ++c) row.push_back(im.pixels.at(r, c));
          rows.push_back(std::move(row));
        }
        e["pixels"] = std::move(rows);
      }
      e["view"] = std::string(to_string(im.view));
      images.push_back(std::move(e));
    }
    j["images"] = std::move(images);
    if (s.findings) j["findings"] = *s.findings;
    if (s.impression) j["impression"] = *s.impression;
    if (s.labels) {
      json labels = json::object();
      for (const auto& [name, value] : *s.labels) labels[name] = std::string(prompt::to_string(value));
      j["labels"] = std::move(labels);
    }
    out << j.dump() << '\n';
  }
}

}  // namespace cxrclip
