#include "spikediff/metrics.hpp"

#include <lapacke.h>

#include <cblas.h>
#include <cmath>
#include <cstdio>

#include "spikediff/rng.hpp"
#include "spikediff/train.hpp"

namespace spikediff {

namespace {

constexpr double kEigClip = -1e-8;

// eigendecomposition of a symmetric matrix; returns V (columns) and lambda
void sym_eig(const std::vector<double>& m, int64_t d, std::vector<double>& vecs,
             std::vector<double>& vals) {
  vecs = m;
  vals.assign(static_cast<size_t>(d), 0.0);
  int info = LAPACKE_dsyev(LAPACK_ROW_MAJOR, 'V', 'U', static_cast<int>(d), vecs.data(),
                           static_cast<int>(d), vals.data());
  SPD_REQUIRE(info == 0, "frechet: eigendecomposition failed (dsyev info=", info, ")");
}

std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                            int64_t d) {
  std::vector<double> c(static_cast<size_t>(d * d), 0.0);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(d), static_cast<int>(d),
              static_cast<int>(d), 1.0, a.data(), static_cast<int>(d), b.data(),
              static_cast<int>(d), 0.0, c.data(), static_cast<int>(d));
  return c;
}

// symmetric square root with eigenvalue clipping
std::vector<double> sym_sqrt(const std::vector<double>& m, int64_t d) {
  std::vector<double> vecs, vals;
  sym_eig(m, d, vecs, vals);
  for (auto& v : vals) v = v > 0 ? std::sqrt(v) : 0.0;  // clip below kEigClip to zero
  // V diag(sqrt) V^T
  std::vector<double> scaled(static_cast<size_t>(d * d));
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j)
      scaled[static_cast<size_t>(i * d + j)] =
          vecs[static_cast<size_t>(i * d + j)] * vals[static_cast<size_t>(j)];
  std::vector<double> out(static_cast<size_t>(d * d), 0.0);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(d), static_cast<int>(d),
              static_cast<int>(d), 1.0, scaled.data(), static_cast<int>(d), vecs.data(),
              static_cast<int>(d), 0.0, out.data(), static_cast<int>(d));
  return out;
}

}  // namespace

double frechet_distance(const FadStats& a, const FadStats& b) {
  SPD_REQUIRE(a.dim == b.dim, "frechet: latent dims differ: ", a.dim, " vs ", b.dim);
  const int64_t d = a.dim;

  double mean_term = 0;
  for (int64_t i = 0; i < d; ++i) {
    double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
    mean_term += diff * diff;
  }
  double tr_a = 0, tr_b = 0;
  for (int64_t i = 0; i < d; ++i) {
    tr_a += a.cov[static_cast<size_t>(i * d + i)];
    tr_b += b.cov[static_cast<size_t>(i * d + i)];
  }

  // Tr((Sa Sb)^{1/2}) = Tr((A^{1/2} Sb A^{1/2})^{1/2}), symmetric PSD route
  std::vector<double> sqrt_a = sym_sqrt(a.cov, d);
  std::vector<double> inner = mat_mul(sqrt_a, mat_mul(b.cov, sqrt_a, d), d);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = i + 1; j < d; ++j) {
      double s = 0.5 * (inner[static_cast<size_t>(i * d + j)] +
                        inner[static_cast<size_t>(j * d + i)]);
      inner[static_cast<size_t>(i * d + j)] = s;
      inner[static_cast<size_t>(j * d + i)] = s;
    }
  std::vector<double> vecs, vals;
  sym_eig(inner, d, vecs, vals);
  double tr_sqrt = 0;
  for (double v : vals) {
    if (v < kEigClip * std::max(1.0, std::abs(vals.back()))) continue;  // clipped
    if (v > 0) tr_sqrt += std::sqrt(v);
  }
  return mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
}

FadStats fit_fad_stats(const Tensor& latents) {
  SPD_REQUIRE(latents.rank() == 2 && latents.dim(0) > 0, "fad: latents must be (N,D), got ",
              shape_str(latents.shape));
  const int64_t n = latents.dim(0), d = latents.dim(1);
  FadStats st;
  st.dim = d;
  st.mean.assign(static_cast<size_t>(d), 0.0);
  st.cov.assign(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      st.mean[static_cast<size_t>(j)] += latents[i * d + j];
  for (auto& m : st.mean) m /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) {
      double cj = latents[i * d + j] - st.mean[static_cast<size_t>(j)];
      for (int64_t k = j; k < d; ++k) {
        double ck = latents[i * d + k] - st.mean[static_cast<size_t>(k)];
        st.cov[static_cast<size_t>(j * d + k)] += cj * ck;
      }
    }
  double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (int64_t j = 0; j < d; ++j)
    for (int64_t k = j; k < d; ++k) {
      double v = st.cov[static_cast<size_t>(j * d + k)] / denom;
      st.cov[static_cast<size_t>(j * d + k)] = v;
      st.cov[static_cast<size_t>(k * d + j)] = v;
    }

  bool degenerate = n < d + 1;
  if (!degenerate) {
    std::vector<double> vecs, vals;
    sym_eig(st.cov, d, vecs, vals);
    degenerate = vals[0] < 1e-12;
  }
  if (degenerate) {
    std::fprintf(stderr, "fad: covariance degenerate (n=%lld, d=%lld), adding 1e-6 ridge\n",
                 static_cast<long long>(n), static_cast<long long>(d));
    for (int64_t j = 0; j < d; ++j) st.cov[static_cast<size_t>(j * d + j)] += 1e-6;
  }
  return st;
}

namespace {

// encoder: 3 stride-2 convs, then a linear head to the latent.
// decoder mirror: linear, 3 upsample+conv stages. relu between layers.
struct AeDims {
  int64_t reduced;       // spatial size after 3 halvings
  int64_t flat;          // reduced^2 * 64
};

AeDims ae_dims(int image_size) {
  SPD_REQUIRE(image_size % 8 == 0, "autoencoder: image size must be divisible by 8, got ",
              image_size);
  AeDims d;
  d.reduced = image_size / 8;
  d.flat = d.reduced * d.reduced * 64;
  return d;
}

ModelParams build_ae(int image_size, int channels, int latent_dim, uint64_t seed) {
  AeDims dims = ae_dims(image_size);
  ModelParams p;
  Rng rng(seed);
  auto conv = [&](const std::string& name, int64_t ci, int64_t co, int64_t k) {
    Tensor w({co, k, k, ci});
    double bound = 1.0 / std::sqrt(static_cast<double>(k * k * ci));
    rng.fill_uniform(w, -bound, bound);
    p.tensors[name + ".w"] = std::move(w);
    p.tensors[name + ".b"] = Tensor::zeros({co});
  };
  auto lin = [&](const std::string& name, int64_t fi, int64_t fo) {
    Tensor w({fo, fi});
    double bound = 1.0 / std::sqrt(static_cast<double>(fi));
    rng.fill_uniform(w, -bound, bound);
    p.tensors[name + ".w"] = std::move(w);
    p.tensors[name + ".b"] = Tensor::zeros({fo});
  };
  conv("enc1", channels, 32, 3);
  conv("enc2", 32, 64, 3);
  conv("enc3", 64, 64, 3);
  lin("enc_head", dims.flat, latent_dim);
  lin("dec_head", latent_dim, dims.flat);
  conv("dec1", 64, 64, 3);
  conv("dec2", 64, 32, 3);
  conv("dec3", 32, channels, 3);
  return p;
}

struct AeRun {
  Val latent;
  Val recon;
  std::map<std::string, Val> bound;
};

AeRun ae_forward(Tape& tape, const Autoencoder& ae, Val images, bool requires_grad) {
  AeRun run;
  auto p = [&](const std::string& name) {
    auto it = run.bound.find(name);
    if (it != run.bound.end()) return it->second;
    Val v = tape.leaf(ae.params.tensors.at(name), requires_grad);
    run.bound.emplace(name, v);
    return v;
  };
  AeDims dims = ae_dims(ae.image_size);
  const Tensor& im = tape.value(images);
  int64_t batch = im.dim(0);

  Val x = ops::replicate_time(tape, images, 1);  // (B,H,W,C,1)
  ops::Conv2dSpec s2{2, 1};
  x = ops::relu(tape, ops::conv2d(tape, x, p("enc1.w"), p("enc1.b"), s2));
  x = ops::relu(tape, ops::conv2d(tape, x, p("enc2.w"), p("enc2.b"), s2));
  x = ops::relu(tape, ops::conv2d(tape, x, p("enc3.w"), p("enc3.b"), s2));
  x = ops::reshape(tape, x, {batch, dims.flat, 1});
  run.latent = ops::linear(tape, x, p("enc_head.w"), p("enc_head.b"));  // (B,D,1)

  Val y = ops::relu(tape, ops::linear(tape, run.latent, p("dec_head.w"), p("dec_head.b")));
  y = ops::reshape(tape, y, {batch, dims.reduced, dims.reduced, 64, 1});
  ops::Conv2dSpec s1{1, 1};
  y = ops::upsample_nearest2x(tape, y);
  y = ops::relu(tape, ops::conv2d(tape, y, p("dec1.w"), p("dec1.b"), s1));
  y = ops::upsample_nearest2x(tape, y);
  y = ops::relu(tape, ops::conv2d(tape, y, p("dec2.w"), p("dec2.b"), s1));
  y = ops::upsample_nearest2x(tape, y);
  y = ops::conv2d(tape, y, p("dec3.w"), p("dec3.b"), s1);
  run.recon = ops::reduce_mean_time(tape, y);  // squeeze the trailing 1
  return run;
}

}  // namespace

Autoencoder train_autoencoder(const Tensor& dataset, int latent_dim, uint64_t seed, int steps,
                              int batch, double lr) {
  SPD_REQUIRE(dataset.rank() == 4 && dataset.dim(0) > 0,
              "autoencoder: dataset must be non-empty (N,H,W,C)");
  Autoencoder ae;
  ae.image_size = static_cast<int>(dataset.dim(1));
  ae.channels = static_cast<int>(dataset.dim(3));
  ae.latent_dim = latent_dim;
  ae.params = build_ae(ae.image_size, ae.channels, latent_dim, seed);

  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  TrainConfig tcfg;
  tcfg.lr = lr;
  AdamState adam;
  const int64_t n = dataset.dim(0);
  const int64_t per = dataset.numel() / n;
  for (int s = 0; s < steps; ++s) {
    Tensor xb({std::min<int64_t>(batch, n), dataset.dim(1), dataset.dim(2), dataset.dim(3)});
    for (int64_t b = 0; b < xb.dim(0); ++b) {
      int64_t idx = rng.uniform_int(0, n - 1);
      std::copy_n(dataset.ptr() + idx * per, per, xb.ptr() + b * per);
    }
    Tape tape;
    Val images = tape.leaf(std::move(xb));
    AeRun run = ae_forward(tape, ae, images, true);
    Val diff = ops::add(tape, run.recon, ops::scale(tape, images, -1.0));
    Val loss = ops::reduce_mean_all(tape, ops::mul(tape, diff, diff));
    double lv = tape.value(loss)[0];
    SPD_REQUIRE(std::isfinite(lv), "autoencoder: non-finite loss at step ", s);
    tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, val] : run.bound) grads[name] = tape.grad(val);
    adam_update(ae.params, grads, adam, tcfg);
  }
  return ae;
}

double autoencoder_mse(const Autoencoder& ae, const Tensor& images) {
  Tape tape(false);
  Val v = tape.leaf(images);
  AeRun run = ae_forward(tape, const_cast<Autoencoder&>(ae), v, false);
  const Tensor& rec = tape.value(run.recon);
  double acc = 0;
  for (int64_t i = 0; i < rec.numel(); ++i) {
    double d = static_cast<double>(rec[i]) - static_cast<double>(images[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(rec.numel());
}

Tensor encode_latents(const Autoencoder& ae, const Tensor& images) {
  SPD_REQUIRE(images.rank() == 4, "fad: images must be (N,H,W,C)");
  const int64_t n = images.dim(0);
  const int64_t per = images.numel() / n;
  Tensor latents({n, ae.latent_dim});
  const int64_t chunk = 128;
  for (int64_t off = 0; off < n; off += chunk) {
    int64_t bsz = std::min(chunk, n - off);
    Tensor xb({bsz, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.ptr() + off * per, bsz * per, xb.ptr());
    Tape tape(false);
    AeRun run = ae_forward(tape, const_cast<Autoencoder&>(ae), tape.leaf(std::move(xb)), false);
    const Tensor& z = tape.value(run.latent);  // (bsz, D, 1)
    std::copy_n(z.ptr(), bsz * ae.latent_dim, latents.ptr() + off * ae.latent_dim);
  }
  return latents;
}

double compute_fad(const Autoencoder& ae, const Tensor& real, const Tensor& generated) {
  SPD_REQUIRE(real.dim(0) > 0 && generated.dim(0) > 0, "fad: image sets must be non-empty");
  FadStats a = fit_fad_stats(encode_latents(ae, real));
  FadStats b = fit_fad_stats(encode_latents(ae, generated));
  return frechet_distance(a, b);
}

}  // namespace spikediff
