#pragma once

#include "spikediff/opcount.hpp"
#include "spikediff/schedule.hpp"
#include "spikediff/unet.hpp"

namespace spikediff {

// Gaussian fit of autoencoder latents for one image set.
struct FadStats {
  int64_t dim = 0;
  std::vector<double> mean;  // (dim)
  std::vector<double> cov;   // (dim x dim), row-major, symmetric PSD
};

// d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square
// root goes through symmetric eigendecompositions with negative eigenvalues
// clipped at -1e-8.
double frechet_distance(const FadStats& a, const FadStats& b);

// Fits mean and covariance of (N, D) latent rows. Adds a 1e-6 ridge (with a
// warning on stderr) when the covariance is degenerate or N < D + 1.
FadStats fit_fad_stats(const Tensor& latents);

// Small conv autoencoder (3 conv encoder to a latent vector, mirror decoder)
// used as the latent model for the Frechet metric.
struct Autoencoder {
  ModelParams params;
  int image_size = 16;
  int channels = 1;
  int latent_dim = 128;
};

Autoencoder train_autoencoder(const Tensor& dataset, int latent_dim, uint64_t seed,
                              int steps = 400, int batch = 64, double lr = 1e-3);

// reconstruction MSE over a set, for training sanity checks
double autoencoder_mse(const Autoencoder& ae, const Tensor& images);

Tensor encode_latents(const Autoencoder& ae, const Tensor& images);  // (N, latent_dim)

double compute_fad(const Autoencoder& ae, const Tensor& real, const Tensor& generated);

// Dynamic operation counts for one denoising step (a full network evaluation
// of `batch` images at step t plus the linear combination) and for a whole
// `num_steps`-step trajectory. Mode Ann runs the same architecture with one
// time step and every activation treated real-valued.
OpCountReport count_ops(ModelParams& params, const UNetConfig& cfg, OpCounter::Mode mode,
                        const Tensor& image_batch, int t, int num_steps);

}  // namespace spikediff
