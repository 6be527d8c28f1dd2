#include "pi/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "pi/error.hpp"

namespace pi {

namespace {

constexpr double norm_eps = 1e-12;

void check_triplet_shapes(const Tensor& ex, const Tensor& e0, const Tensor& e1, std::size_t labels) {
    require(ex.rank() == 2 && ex.shape() == e0.shape() && ex.shape() == e1.shape(), ErrorKind::dimension,
            "triplet embeddings must share one (N, D) shape, got " + shape_str(ex.shape()) + ", " +
                shape_str(e0.shape()) + ", " + shape_str(e1.shape()));
    require(ex.dim(0) == labels, ErrorKind::dimension,
            "triplet labels: expected " + std::to_string(ex.dim(0)) + ", got " + std::to_string(labels));
}

void check_square(const Tensor& sim) {
    require(sim.rank() == 2 && sim.dim(0) == sim.dim(1), ErrorKind::dimension,
            "similarity matrix must be square, got " + shape_str(sim.shape()));
}

Tensor symmetric_cross_entropy(const Tensor& logits) {
    Tensor rows = mean(diagonal(log_softmax(logits, 1)));
    Tensor cols = mean(diagonal(log_softmax(logits, 0)));
    return scale(add(rows, cols), -0.5);
}

}  // namespace

Tensor stack_images(const std::vector<const Image*>& images, bool normalize) {
    require(!images.empty(), ErrorKind::input, "no images to stack");
    const Image& first = *images.front();
    const std::size_t n = first.size();
    std::vector<double> data(images.size() * n);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& im = *images[i];
        require(im.channels == first.channels && im.height == first.height && im.width == first.width,
                ErrorKind::dimension, "images in a batch must share one size");
        std::copy(im.pixels.begin(), im.pixels.end(), data.begin() + static_cast<std::ptrdiff_t>(i * n));
        if (normalize) {
            require(im.channels == 3, ErrorKind::dimension, "normalization expects 3 channels");
            const std::size_t plane = im.height * im.width;
            for (std::size_t c = 0; c < 3; ++c) {
                double* p = data.data() + i * n + c * plane;
                for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - image_mean[c]) / image_std[c];
            }
        }
    }
    return Tensor::from({images.size(), first.channels, first.height, first.width}, std::move(data));
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
    require(u.size() == v.size(), ErrorKind::dimension, "cosine distance of vectors with different lengths");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return 1.0 - dot / ((std::sqrt(nu) + norm_eps) * (std::sqrt(nv) + norm_eps));
}

Tensor cosine_distance(const Tensor& u, const Tensor& v) {
    require(u.shape() == v.shape() && u.rank() == 2, ErrorKind::dimension,
            "cosine distance needs two (N, D) tensors, got " + shape_str(u.shape()) + " and " +
                shape_str(v.shape()));
    Tensor sim = sum_last(mul(l2_normalize(u, norm_eps), l2_normalize(v, norm_eps)));
    return add_scalar(scale(sim, -1.0), 1.0);
}

Tensor perceptual_triplet_loss(const Tensor& ex, const Tensor& e0, const Tensor& e1,
                               std::span<const std::uint8_t> y, double margin) {
    check_triplet_shapes(ex, e0, e1, y.size());
    require(margin > 0.0, ErrorKind::input, "margin must be positive");
    std::vector<double> ybar(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        require(y[i] <= 1, ErrorKind::input, "triplet judgment must be 0 or 1, got " + std::to_string(y[i]));
        ybar[i] = y[i] == 0 ? -1.0 : 1.0;
    }
    Tensor delta = sub(cosine_distance(ex, e0), cosine_distance(ex, e1));
    Tensor signed_delta = mul(delta, Tensor::from({y.size()}, std::move(ybar)));
    return mean(relu(add_scalar(scale(signed_delta, -1.0), margin)));
}

Tensor infonce_loss(const Tensor& sim, double tau) {
    check_square(sim);
    require(tau > 0.0, ErrorKind::input, "temperature must be positive");
    return symmetric_cross_entropy(scale(sim, 1.0 / tau));
}

Tensor infonce_loss(const Tensor& sim, const Tensor& log_scale) {
    check_square(sim);
    require(log_scale.numel() == 1, ErrorKind::dimension, "log scale must be a scalar");
    return symmetric_cross_entropy(mul(sim, exp(log_scale)));
}

double triplet_2afc_accuracy(const Tensor& ex, const Tensor& e0, const Tensor& e1,
                             std::span<const std::uint8_t> y) {
    require(!y.empty(), ErrorKind::input, "2AFC accuracy of an empty triplet set");
    check_triplet_shapes(ex, e0, e1, y.size());
    const std::size_t n = ex.dim(0);
    const std::size_t d = ex.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = [&](const Tensor& t) { return t.data().subspan(i * d, d); };
        const double d0 = cosine_distance(row(ex), row(e0));
        const double d1 = cosine_distance(row(ex), row(e1));
        if ((y[i] == 0 && d0 < d1) || (y[i] == 1 && d1 < d0)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

Tensor embed_images(const EncoderParams& params, const std::vector<const Image*>& images,
                    std::size_t batch_size) {
    require(!images.empty(), ErrorKind::input, "no images to embed");
    NoGradGuard no_grad;
    const std::size_t dim = params.vision.proj_dim;
    std::vector<double> out;
    out.reserve(images.size() * dim);
    for (std::size_t begin = 0; begin < images.size(); begin += batch_size) {
        const std::size_t end = std::min(images.size(), begin + batch_size);
        std::vector<const Image*> chunk(images.begin() + static_cast<std::ptrdiff_t>(begin),
                                        images.begin() + static_cast<std::ptrdiff_t>(end));
        Tensor e = encode_image(params, stack_images(chunk, true));
        out.insert(out.end(), e.data().begin(), e.data().end());
    }
    return Tensor::from({images.size(), dim}, std::move(out));
}

double triplet_2afc_accuracy(const EncoderParams& params, std::span<const TripletRecord> triplets,
                             std::size_t batch_size) {
    require(!triplets.empty(), ErrorKind::input, "2AFC accuracy of an empty triplet set");
    std::vector<const Image*> xs, x0s, x1s;
    std::vector<std::uint8_t> y;
    for (const TripletRecord& t : triplets) {
        xs.push_back(&t.x);
        x0s.push_back(&t.x0);
        x1s.push_back(&t.x1);
        y.push_back(t.y);
    }
    return triplet_2afc_accuracy(embed_images(params, xs, batch_size), embed_images(params, x0s, batch_size),
                                 embed_images(params, x1s, batch_size), y);
}

}  // namespace pi
