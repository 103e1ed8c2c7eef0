#include "cxrclip/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "cxrclip/errors.hpp"
#include "cxrclip/rng.hpp"

namespace cxrclip::model {

namespace {

enum ImageBlock { kConvW, kConvB, kImgFc1W, kImgFc1B, kImgFc2W, kImgFc2B, kImgProj };
enum TextBlock { kEmbed, kTxtFc1W, kTxtFc1B, kTxtFc2W, kTxtFc2B, kTxtProj };

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ParamBlock glorot_block(std::string name, std::vector<std::size_t> shape, std::size_t fan_in,
                        std::size_t fan_out, std::uint64_t seed) {
  ParamBlock b{std::move(name), std::move(shape), {}};
  b.values.resize(product(b.shape));
  Rng rng(derive_seed(seed, b.name));
  const double limit = glorot_limit(fan_in, fan_out);
  for (double& v : b.values) v = rng.uniform(-limit, limit);
  return b;
}

ParamBlock zero_block(std::string name, std::size_t n) { return ParamBlock{std::move(name), {n}, std::vector<double>(n, 0.0)}; }

// y = W x + b, W is out x in.
void linear(const std::vector<double>& w, const std::vector<double>* b, std::span<const double> x,
            std::size_t out, std::vector<double>& y) {
  const std::size_t in = x.size();
  y.assign(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b != nullptr ? (*b)[o] : 0.0;
    const double* row = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
    y[o] = s;
  }
}

// Accumulates dW += g x^T, db += g; returns dx = W^T g.
std::vector<double> linear_backward(const std::vector<double>& w, std::span<const double> x,
                                    std::span<const double> g, std::vector<double>& dw,
                                    std::vector<double>* db) {
  const std::size_t in = x.size();
  std::vector<double> dx(in, 0.0);
  for (std::size_t o = 0; o < g.size(); ++o) {
    const double go = g[o];
    if (db != nullptr) (*db)[o] += go;
    if (go == 0.0) continue;
    const double* row = w.data() + o * in;
    double* drow = dw.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      drow[i] += go * x[i];
      dx[i] += go * row[i];
    }
  }
  return dx;
}

void relu(std::vector<double>& v) {
  for (double& x : v) x = std::max(0.0, x);
}

void relu_backward(const std::vector<double>& activated, std::vector<double>& g) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(activated[i] > 0.0)) g[i] = 0.0;
  }
}

std::vector<double> unit(const std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 1e-12)) throw ZeroRow(0);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

// 3x3 stride-2 patches with zero padding, one row of 9 values per output position.
std::vector<double> im2col(const Image& img) {
  const int out_h = (img.height + 1) / 2;
  const int out_w = (img.width + 1) / 2;
  std::vector<double> patches(static_cast<std::size_t>(out_h) * out_w * 9, 0.0);
  double* dst = patches.data();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox, dst += 9) {
      for (int dy = -1; dy <= 1; ++dy) {
        const int y = 2 * oy + dy;
        if (y < 0 || y >= img.height) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = 2 * ox + dx;
          if (x >= 0 && x < img.width) dst[(dy + 1) * 3 + (dx + 1)] = img.at(y, x);
        }
      }
    }
  }
  return patches;
}

void check_shape(const ParamBlock& b, const std::vector<std::size_t>& expected) {
  if (b.shape != expected || b.values.size() != product(expected)) {
    throw ShapeMismatch("parameter block " + b.name + " has the wrong shape");
  }
}

EncodedBatch assemble(std::vector<EncoderOutput> outputs, std::size_t embed, Modality role) {
  Matrix projected(outputs.size(), embed);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    std::copy(outputs[i].projected.begin(), outputs[i].projected.end(), projected.row(i).begin());
  }
  EmbeddingBatch emb = l2_normalize(projected, role);
  return EncodedBatch{std::move(outputs), std::move(projected), std::move(emb)};
}

}  // namespace

std::vector<ParamBlock> zeros_like(const std::vector<ParamBlock>& blocks) {
  std::vector<ParamBlock> out = blocks;
  for (auto& b : out) std::fill(b.values.begin(), b.values.end(), 0.0);
  return out;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// ---- tokenizer ----------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_.front() != kUnkToken) {
    throw std::invalid_argument("vocabulary must start with the UNK token");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  words.erase(std::string(kUnkToken));
  std::vector<std::string> tokens{std::string(kUnkToken)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

// ---- image encoder --------------------------------------------------------

ImageEncoder::ImageEncoder(const ImageEncoderDims& dims, std::uint64_t seed) : dims_(dims) {
  if (dims.input_size < 2 || dims.filters < 1 || dims.hidden < 1 || dims.feature < 1 || dims.embed < 2) {
    throw std::invalid_argument("image encoder dimensions must be positive");
  }
  const auto f = static_cast<std::size_t>(dims.filters);
  const auto h = static_cast<std::size_t>(dims.hidden);
  const auto fe = static_cast<std::size_t>(dims.feature);
  const auto e = static_cast<std::size_t>(dims.embed);
  params_.push_back(glorot_block("image.conv.weight", {f, 3, 3}, 9, 9 * f, seed));
  params_.push_back(zero_block("image.conv.bias", f));
  params_.push_back(glorot_block("image.fc1.weight", {h, f}, f, h, seed));
  params_.push_back(zero_block("image.fc1.bias", h));
  params_.push_back(glorot_block("image.fc2.weight", {fe, h}, h, fe, seed));
  params_.push_back(zero_block("image.fc2.bias", fe));
  params_.push_back(glorot_block("image.proj.weight", {e, fe}, fe, e, seed));
}

ImageEncoder::ImageEncoder(const ImageEncoderDims& dims, std::vector<ParamBlock> params)
    : dims_(dims), params_(std::move(params)) {
  check_params();
}

void ImageEncoder::check_params() const {
  if (params_.size() != 7) throw ShapeMismatch("image encoder expects 7 parameter blocks");
  const auto f = static_cast<std::size_t>(dims_.filters);
  const auto h = static_cast<std::size_t>(dims_.hidden);
  const auto fe = static_cast<std::size_t>(dims_.feature);
  const auto e = static_cast<std::size_t>(dims_.embed);
  check_shape(params_[kConvW], {f, 3, 3});
  check_shape(params_[kConvB], {f});
  check_shape(params_[kImgFc1W], {h, f});
  check_shape(params_[kImgFc1B], {h});
  check_shape(params_[kImgFc2W], {fe, h});
  check_shape(params_[kImgFc2B], {fe});
  check_shape(params_[kImgProj], {e, fe});
}

EncoderOutput ImageEncoder::encode(const Image& img) const {
  const int size = dims_.input_size;
  if (img.height != size || img.width != size) {
    throw ShapeMismatch("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        ", encoder expects " + std::to_string(size) + "x" + std::to_string(size));
  }
  const int out_size = (size + 1) / 2;
  const std::size_t positions = static_cast<std::size_t>(out_size) * out_size;
  const auto filters = static_cast<std::size_t>(dims_.filters);
  const auto& w = params_[kConvW].values;
  const auto& b = params_[kConvB].values;

  EncoderOutput out;
  out.input = im2col(img);
  out.activations.assign(filters * positions, 0.0);
  out.pooled.assign(filters, 0.0);
  for (std::size_t k = 0; k < filters; ++k) {
    const double* wk = w.data() + k * 9;
    double* act = out.activations.data() + k * positions;
    double sum = 0.0;
    for (std::size_t p = 0; p < positions; ++p) {
      const double* patch = out.input.data() + p * 9;
      double v = b[k];
      for (int t = 0; t < 9; ++t) v += wk[t] * patch[t];
      v = std::max(0.0, v);
      act[p] = v;
      sum += v;
    }
    out.pooled[k] = sum / static_cast<double>(positions);
  }

  linear(params_[kImgFc1W].values, &params_[kImgFc1B].values, out.pooled,
         static_cast<std::size_t>(dims_.hidden), out.hidden);
  relu(out.hidden);
  linear(params_[kImgFc2W].values, &params_[kImgFc2B].values, out.hidden,
         static_cast<std::size_t>(dims_.feature), out.feature);
  linear(params_[kImgProj].values, nullptr, out.feature, static_cast<std::size_t>(dims_.embed),
         out.projected);
  out.embedding = unit(out.projected);
  return out;
}

EncodedBatch ImageEncoder::encode_batch(std::span<const Image> images) const {
  std::vector<EncoderOutput> outputs;
  outputs.reserve(images.size());
  for (const auto& img : images) outputs.push_back(encode(img));
  return assemble(std::move(outputs), static_cast<std::size_t>(dims_.embed), Modality::image);
}

void ImageEncoder::backward(const EncodedBatch& batch, const Matrix& grad_embeddings,
                            std::vector<ParamBlock>& grads) const {
  const Matrix grad_projected =
      l2_normalize_backward(batch.projected, batch.embeddings.rows(), grad_embeddings);
  for (std::size_t i = 0; i < batch.outputs.size(); ++i) {
    backward_one(batch.outputs[i], grad_projected.row(i), grads);
  }
}

void ImageEncoder::backward_one(const EncoderOutput& out, std::span<const double> grad_projected,
                                std::vector<ParamBlock>& grads) const {
  std::vector<double> g_feature =
      linear_backward(params_[kImgProj].values, out.feature, grad_projected, grads[kImgProj].values, nullptr);
  std::vector<double> g_hidden = linear_backward(params_[kImgFc2W].values, out.hidden, g_feature,
                                                 grads[kImgFc2W].values, &grads[kImgFc2B].values);
  relu_backward(out.hidden, g_hidden);
  std::vector<double> g_pooled = linear_backward(params_[kImgFc1W].values, out.pooled, g_hidden,
                                                 grads[kImgFc1W].values, &grads[kImgFc1B].values);

  const std::size_t positions = out.input.size() / 9;
  auto& gw = grads[kConvW].values;
  auto& gb = grads[kConvB].values;
  for (std::size_t k = 0; k < g_pooled.size(); ++k) {
    const double g = g_pooled[k] / static_cast<double>(positions);
    if (g == 0.0) continue;
    const double* act = out.activations.data() + k * positions;
    double patch_sum[9] = {};
    std::size_t active = 0;
    for (std::size_t p = 0; p < positions; ++p) {
      if (!(act[p] > 0.0)) continue;
      ++active;
      const double* patch = out.input.data() + p * 9;
      for (int t = 0; t < 9; ++t) patch_sum[t] += patch[t];
    }
    gb[k] += g * static_cast<double>(active);
    double* gwk = gw.data() + k * 9;
    for (int t = 0; t < 9; ++t) gwk[t] += g * patch_sum[t];
  }
}

// ---- text encoder ---------------------------------------------------------

TextEncoder::TextEncoder(const TextEncoderDims& dims, Vocabulary vocab, std::uint64_t seed)
    : dims_(dims), vocab_(std::move(vocab)) {
  if (dims.token_dim < 1 || dims.hidden < 1 || dims.feature < 1 || dims.embed < 2) {
    throw std::invalid_argument("text encoder dimensions must be positive");
  }
  const std::size_t v = vocab_.size();
  const auto t = static_cast<std::size_t>(dims.token_dim);
  const auto h = static_cast<std::size_t>(dims.hidden);
  const auto fe = static_cast<std::size_t>(dims.feature);
  const auto e = static_cast<std::size_t>(dims.embed);
  params_.push_back(glorot_block("text.embedding", {v, t}, v, t, seed));
  params_.push_back(glorot_block("text.fc1.weight", {h, t}, t, h, seed));
  params_.push_back(zero_block("text.fc1.bias", h));
  params_.push_back(glorot_block("text.fc2.weight", {fe, h}, h, fe, seed));
  params_.push_back(zero_block("text.fc2.bias", fe));
  params_.push_back(glorot_block("text.proj.weight", {e, fe}, fe, e, seed));
}

TextEncoder::TextEncoder(const TextEncoderDims& dims, Vocabulary vocab, std::vector<ParamBlock> params)
    : dims_(dims), vocab_(std::move(vocab)), params_(std::move(params)) {
  check_params();
}

void TextEncoder::check_params() const {
  if (params_.size() != 6) throw ShapeMismatch("text encoder expects 6 parameter blocks");
  const auto t = static_cast<std::size_t>(dims_.token_dim);
  const auto h = static_cast<std::size_t>(dims_.hidden);
  const auto fe = static_cast<std::size_t>(dims_.feature);
  const auto e = static_cast<std::size_t>(dims_.embed);
  check_shape(params_[kEmbed], {vocab_.size(), t});
  check_shape(params_[kTxtFc1W], {h, t});
  check_shape(params_[kTxtFc1B], {h});
  check_shape(params_[kTxtFc2W], {fe, h});
  check_shape(params_[kTxtFc2B], {fe});
  check_shape(params_[kTxtProj], {e, fe});
}

EncoderOutput TextEncoder::encode_ids(std::span<const int> ids) const {
  if (ids.empty()) throw EmptySequence("text encoder needs at least one token");
  const auto t = static_cast<std::size_t>(dims_.token_dim);
  const auto& table = params_[kEmbed].values;
  EncoderOutput out;
  out.token_ids.assign(ids.begin(), ids.end());
  out.pooled.assign(t, 0.0);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) throw ShapeMismatch("token id out of range");
    const double* row = table.data() + static_cast<std::size_t>(id) * t;
    for (std::size_t j = 0; j < t; ++j) out.pooled[j] += row[j];
  }
  for (double& v : out.pooled) v /= static_cast<double>(ids.size());

  linear(params_[kTxtFc1W].values, &params_[kTxtFc1B].values, out.pooled,
         static_cast<std::size_t>(dims_.hidden), out.hidden);
  relu(out.hidden);
  linear(params_[kTxtFc2W].values, &params_[kTxtFc2B].values, out.hidden,
         static_cast<std::size_t>(dims_.feature), out.feature);
  linear(params_[kTxtProj].values, nullptr, out.feature, static_cast<std::size_t>(dims_.embed),
         out.projected);
  out.embedding = unit(out.projected);
  return out;
}

EncodedBatch TextEncoder::encode_batch(std::span<const std::string> texts) const {
  std::vector<EncoderOutput> outputs;
  outputs.reserve(texts.size());
  for (const auto& t : texts) outputs.push_back(encode(t));
  return assemble(std::move(outputs), static_cast<std::size_t>(dims_.embed), Modality::text);
}

void TextEncoder::backward(const EncodedBatch& batch, const Matrix& grad_embeddings,
                           std::vector<ParamBlock>& grads) const {
  const Matrix grad_projected =
      l2_normalize_backward(batch.projected, batch.embeddings.rows(), grad_embeddings);
  for (std::size_t i = 0; i < batch.outputs.size(); ++i) {
    backward_one(batch.outputs[i], grad_projected.row(i), grads);
  }
}

void TextEncoder::backward_one(const EncoderOutput& out, std::span<const double> grad_projected,
                               std::vector<ParamBlock>& grads) const {
  std::vector<double> g_feature =
      linear_backward(params_[kTxtProj].values, out.feature, grad_projected, grads[kTxtProj].values, nullptr);
  std::vector<double> g_hidden = linear_backward(params_[kTxtFc2W].values, out.hidden, g_feature,
                                                 grads[kTxtFc2W].values, &grads[kTxtFc2B].values);
  relu_backward(out.hidden, g_hidden);
  std::vector<double> g_pooled = linear_backward(params_[kTxtFc1W].values, out.pooled, g_hidden,
                                                 grads[kTxtFc1W].values, &grads[kTxtFc1B].values);
  const auto t = static_cast<std::size_t>(dims_.token_dim);
  const double inv_len = 1.0 / static_cast<double>(out.token_ids.size());
  auto& gtable = grads[kEmbed].values;
  for (int id : out.token_ids) {
    double* row = gtable.data() + static_cast<std::size_t>(id) * t;
    for (std::size_t j = 0; j < t; ++j) row[j] += g_pooled[j] * inv_len;
  }
}

// ---- model ----------------------------------------------------------------

ClipModel::ClipModel(ImageEncoder image_encoder, TextEncoder text_encoder, Temperature temp)
    : image(std::move(image_encoder)), text(std::move(text_encoder)), temperature(temp) {
  if (image.dims().embed != text.dims().embed) {
    throw ShapeMismatch("image and text projections must have the same width");
  }
}

ClipModel init_model(const ImageEncoderDims& image_dims, const TextEncoderDims& text_dims,
                     Vocabulary vocab, std::uint64_t seed, double initial_tau) {
  return ClipModel(ImageEncoder(image_dims, derive_seed(seed, "image")),
                   TextEncoder(text_dims, std::move(vocab), derive_seed(seed, "text")),
                   Temperature::from_tau(initial_tau));
}

}  // namespace cxrclip::model
