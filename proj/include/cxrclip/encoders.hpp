#pragma once

// Small trainable encoders with the global-feature -> linear projection ->
// L2-normalize contract.
//
//   image: 3x3 stride-2 conv + ReLU -> global average pool -> Linear+ReLU ->
//          Linear -> projection (no bias) -> normalize
//   text:  token embedding -> mean pool -> Linear+ReLU -> Linear ->
//          projection (no bias) -> normalize

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cxrclip/image.hpp"
#include "cxrclip/losses.hpp"
#include "cxrclip/matrix.hpp"

namespace cxrclip::model {

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

std::vector<ParamBlock> zeros_like(const std::vector<ParamBlock>& blocks);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
double glorot_limit(std::size_t fan_in, std::size_t fan_out);

// ---- tokenizer ----------------------------------------------------------

// Lowercases, turns every non-alphanumeric character into a space and
// splits on whitespace.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  // tokens[0] must be the UNK token.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Sorted unique words of all texts, after UNK.
  static Vocabulary build(const std::vector<std::string>& texts);

  int id(std::string_view word) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Empty text maps to a single UNK.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

// ---- encoders -------------------------------------------------------------

struct ImageEncoderDims {
  int input_size = 32;
  int filters = 32;
  int hidden = 128;
  int feature = 64;
  int embed = 64;
};

struct TextEncoderDims {
  int token_dim = 32;
  int hidden = 64;
  int feature = 64;
  int embed = 64;
};

struct EncoderOutput {
  std::vector<double> feature;    // before projection
  std::vector<double> projected;  // after projection, before normalization
  std::vector<double> embedding;  // unit norm

  // intermediates for backprop
  std::vector<double> input;       // image: 3x3 patches, 9 per output position
  std::vector<int> token_ids;      // text tokens
  std::vector<double> activations; // image: ReLU(conv) maps, filters x positions
  std::vector<double> pooled;
  std::vector<double> hidden;      // post-ReLU
};

struct EncodedBatch {
  std::vector<EncoderOutput> outputs;
  Matrix projected;
  EmbeddingBatch embeddings;
};

class ImageEncoder {
 public:
  ImageEncoder(const ImageEncoderDims& dims, std::uint64_t seed);
  ImageEncoder(const ImageEncoderDims& dims, std::vector<ParamBlock> params);

  const ImageEncoderDims& dims() const { return dims_; }
  std::vector<ParamBlock>& params() { return params_; }
  const std::vector<ParamBlock>& params() const { return params_; }

  EncoderOutput encode(const Image& img) const;
  EncodedBatch encode_batch(std::span<const Image> images) const;

  // Accumulates parameter gradients given dL/d(embedding) per batch row.
  void backward(const EncodedBatch& batch, const Matrix& grad_embeddings,
                std::vector<ParamBlock>& grads) const;

 private:
  void check_params() const;
  void backward_one(const EncoderOutput& out, std::span<const double> grad_projected,
                    std::vector<ParamBlock>& grads) const;

  ImageEncoderDims dims_;
  std::vector<ParamBlock> params_;
};

class TextEncoder {
 public:
  TextEncoder(const TextEncoderDims& dims, Vocabulary vocab, std::uint64_t seed);
  TextEncoder(const TextEncoderDims& dims, Vocabulary vocab, std::vector<ParamBlock> params);

  const TextEncoderDims& dims() const { return dims_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::vector<ParamBlock>& params() { return params_; }
  const std::vector<ParamBlock>& params() const { return params_; }

  EncoderOutput encode_ids(std::span<const int> ids) const;
  EncoderOutput encode(std::string_view text) const { return encode_ids(tokenize(text, vocab_)); }
  EncodedBatch encode_batch(std::span<const std::string> texts) const;

  void backward(const EncodedBatch& batch, const Matrix& grad_embeddings,
                std::vector<ParamBlock>& grads) const;

 private:
  void check_params() const;
  void backward_one(const EncoderOutput& out, std::span<const double> grad_projected,
                    std::vector<ParamBlock>& grads) const;

  TextEncoderDims dims_;
  Vocabulary vocab_;
  std::vector<ParamBlock> params_;
};

// Both encoders plus the learnable temperature.
struct ClipModel {
  ImageEncoder image;
  TextEncoder text;
  Temperature temperature;

  // Throws ShapeMismatch when the two projection widths differ.
  ClipModel(ImageEncoder image_encoder, TextEncoder text_encoder, Temperature temp = {});
};

ClipModel init_model(const ImageEncoderDims& image_dims, const TextEncoderDims& text_dims,
                     Vocabulary vocab, std::uint64_t seed, double initial_tau = Temperature::kInitial);

}  // namespace cxrclip::model
