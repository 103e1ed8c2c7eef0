#include "cxrclip/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cxrclip/errors.hpp"

namespace cxrclip::model {

namespace {

constexpr const char* kMagic = "cxrclip-checkpoint";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_array(std::ostringstream& out, const ParamBlock& b) {
  out << "array " << b.name << ' ' << b.shape.size();
  for (auto d : b.shape) out << ' ' << d;
  out << '\n';
  for (std::size_t i = 0; i < b.values.size(); ++i) {
    if (i > 0) out << ' ';
    out << format_double(b.values[i]);
  }
  out << '\n';
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string line() {
    std::string l;
    if (!std::getline(in_, l)) throw DataError("checkpoint truncated after line " + std::to_string(line_no_));
    ++line_no_;
    return l;
  }

  std::istringstream fields(const std::string& expected_key) {
    std::istringstream f(line());
    std::string key;
    f >> key;
    if (key != expected_key) fail("expected '" + expected_key + "', got '" + key + "'");
    return f;
  }

  ParamBlock array() {
    auto f = fields("array");
    ParamBlock b;
    std::size_t ndim = 0;
    f >> b.name >> ndim;
    b.shape.resize(ndim);
    std::size_t count = 1;
    for (auto& d : b.shape) {
      f >> d;
      count *= d;
    }
    if (!f) fail("bad array header");
    std::istringstream values(line());
    b.values.resize(count);
    for (double& v : b.values) {
      std::string tok;
      if (!(values >> tok)) fail("array " + b.name + " has too few values");
      v = std::strtod(tok.c_str(), nullptr);
    }
    std::string extra;
    if (values >> extra) fail("array " + b.name + " has too many values");
    return b;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istringstream in_;
  std::size_t line_no_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ClipModel& m, const std::map<std::string, std::string>& meta) {
  std::ostringstream out;
  out << kMagic << '\n';
  out << "format_version " << kCheckpointVersion << '\n';
  out << "meta " << meta.size() << '\n';
  for (const auto& [k, v] : meta) out << k << ' ' << v << '\n';
  const auto& id = m.image.dims();
  out << "image_dims " << id.input_size << ' ' << id.filters << ' ' << id.hidden << ' ' << id.feature << ' '
      << id.embed << '\n';
  const auto& td = m.text.dims();
  out << "text_dims " << td.token_dim << ' ' << td.hidden << ' ' << td.feature << ' ' << td.embed << '\n';
  out << "log_tau " << format_double(m.temperature.log_tau) << '\n';
  const auto& tokens = m.text.vocab().tokens();
  out << "vocab " << tokens.size() << '\n';
  for (const auto& t : tokens) out << t << '\n';
  out << "arrays " << m.image.params().size() + m.text.params().size() << '\n';
  for (const auto& b : m.image.params()) write_array(out, b);
  for (const auto& b : m.text.params()) write_array(out, b);
  out << "end\n";
  return out.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  Reader r(text);
  if (r.line() != kMagic) r.fail("not a checkpoint file");
  int version = 0;
  r.fields("format_version") >> version;
  if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));

  std::size_t meta_count = 0;
  r.fields("meta") >> meta_count;
  std::map<std::string, std::string> meta;
  for (std::size_t i = 0; i < meta_count; ++i) {
    const std::string l = r.line();
    const auto sp = l.find(' ');
    meta[l.substr(0, sp)] = sp == std::string::npos ? "" : l.substr(sp + 1);
  }

  ImageEncoderDims id;
  auto fi = r.fields("image_dims");
  fi >> id.input_size >> id.filters >> id.hidden >> id.feature >> id.embed;
  if (!fi) r.fail("bad image_dims");
  TextEncoderDims td;
  auto ft = r.fields("text_dims");
  ft >> td.token_dim >> td.hidden >> td.feature >> td.embed;
  if (!ft) r.fail("bad text_dims");
  std::string tau_text;
  r.fields("log_tau") >> tau_text;
  const double log_tau = std::strtod(tau_text.c_str(), nullptr);

  std::size_t vocab_size = 0;
  r.fields("vocab") >> vocab_size;
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < vocab_size; ++i) tokens.push_back(r.line());

  std::size_t array_count = 0;
  r.fields("arrays") >> array_count;
  std::vector<ParamBlock> image_params;
  std::vector<ParamBlock> text_params;
  for (std::size_t i = 0; i < array_count; ++i) {
    ParamBlock b = r.array();
    (b.name.rfind("image.", 0) == 0 ? image_params : text_params).push_back(std::move(b));
  }
  if (r.line() != "end") r.fail("missing end marker");

  try {
    return Checkpoint{ClipModel(ImageEncoder(id, std::move(image_params)),
                                TextEncoder(td, Vocabulary(std::move(tokens)), std::move(text_params)),
                                Temperature{log_tau}),
                      std::move(meta)};
  } catch (const ShapeMismatch& e) {
    throw DataError(std::string("checkpoint arrays inconsistent: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint vocabulary invalid: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ClipModel& m,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(m, meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace cxrclip::model
