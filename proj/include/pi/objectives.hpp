#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pi/encoders.hpp"
#include "pi/image.hpp"
#include "pi/tensor.hpp"

namespace pi {

inline constexpr double default_margin = 0.05;

/// Reference x, variants x~0 and x~1, and the judgment y: 0 when x~0 was
/// judged more similar to x, 1 when x~1 was.
struct TripletRecord {
    Image x;
    Image x0;
    Image x1;
    std::uint8_t y = 0;
};

/// 1 - u.v / (|u| |v|), with the norms eps-guarded.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// Row-wise cosine distance between two (N, D) tensors -> (N).
Tensor cosine_distance(const Tensor& u, const Tensor& v);

/// Mean over rows of max(0, m - (d(x, x0) - d(x, x1)) * ybar), ybar = -1 for
/// y = 0 and +1 for y = 1. Embeddings are (N, D).
Tensor perceptual_triplet_loss(const Tensor& ex, const Tensor& e0, const Tensor& e1,
                               std::span<const std::uint8_t> y, double margin = default_margin);

/// Symmetric cross-entropy over sim / tau with matched pairs on the diagonal.
Tensor infonce_loss(const Tensor& sim, double tau);

/// Same loss with logits sim * exp(log_scale), differentiable in log_scale.
Tensor infonce_loss(const Tensor& sim, const Tensor& log_scale);

/// Fraction of rows where the distance to the judged-similar variant is
/// strictly smaller. Ties count as incorrect.
double triplet_2afc_accuracy(const Tensor& ex, const Tensor& e0, const Tensor& e1,
                             std::span<const std::uint8_t> y);

double triplet_2afc_accuracy(const EncoderParams& params, std::span<const TripletRecord> triplets,
                             std::size_t batch_size = 256);

/// Embeddings of raw [0, 1] images (normalized on input) under no-grad, in
/// batches. The embeddings themselves are not normalized.
Tensor embed_images(const EncoderParams& params, const std::vector<const Image*>& images,
                    std::size_t batch_size = 256);

}  // namespace pi
