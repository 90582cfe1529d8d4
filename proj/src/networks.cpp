#include "dgpvae/networks.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dgpvae {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::size_t temporal_input_dim(const EncoderConfig& cfg, const InputSpec& input) {
  if (input.image) {
    return input.height * input.width * (cfg.image_preproc ? cfg.image_preproc->filters : 1);
  }
  return input.feature_dim;
}

std::string ff_name(const char* prefix, std::size_t i, const char* leaf) {
  return std::string(prefix) + std::to_string(i) + "." + leaf;
}

}  // namespace

void EncoderConfig::validate() const {
  require(latent_dim >= 1, "EncoderConfig: latent_dim must be >= 1");
  require(temporal_filters >= 1 && temporal_width >= 1,
          "EncoderConfig: temporal conv needs filters >= 1 and width >= 1");
  require(ff_width >= 1, "EncoderConfig: feedforward width must be >= 1");
  require(series_length >= 1, "EncoderConfig: series_length must be >= 1");
  if (image_preproc) {
    require(image_preproc->layers >= 1 && image_preproc->filters >= 1 &&
                image_preproc->filter_size >= 1,
            "EncoderConfig: conv2d preprocessing needs layers, filters and size >= 1");
  }
}

void DecoderConfig::validate() const {
  require(output_dim >= 1, "DecoderConfig: output_dim must be >= 1");
  require(ff_width >= 1, "DecoderConfig: feedforward width must be >= 1");
  require(observation_variance > 0.0, "DecoderConfig: observation variance must be positive");
}

void init_model_params(ParameterStore& store, const EncoderConfig& enc, const DecoderConfig& dec,
                       const InputSpec& input, Rng& rng) {
  enc.validate();
  dec.validate();
  if (input.image) {
    require(enc.image_preproc.has_value(),
            "init_model_params: image input requires conv2d preprocessing");
    const Conv2dSpec& p = *enc.image_preproc;
    for (std::size_t i = 0; i < p.layers; ++i) {
      std::size_t cin = i == 0 ? 1 : p.filters;
      std::size_t fan = p.filter_size * p.filter_size;
      store.create(ff_name("enc.preproc", i, "w"),
                   glorot_uniform({p.filter_size, p.filter_size, cin, p.filters}, fan * cin,
                                  fan * p.filters, rng));
      store.create(ff_name("enc.preproc", i, "b"), Tensor::zeros({p.filters}));
    }
  }
  std::size_t tin = temporal_input_dim(enc, input);
  store.create("enc.tconv.w",
               glorot_uniform({enc.temporal_width, tin, enc.temporal_filters},
                              enc.temporal_width * tin, enc.temporal_width * enc.temporal_filters,
                              rng));
  store.create("enc.tconv.b", Tensor::zeros({enc.temporal_filters}));
  std::size_t in_dim = enc.temporal_filters;
  for (std::size_t i = 0; i < enc.ff_layers; ++i) {
    store.create(ff_name("enc.ff", i, "w"), glorot_uniform({in_dim, enc.ff_width}, in_dim,
                                                           enc.ff_width, rng));
    store.create(ff_name("enc.ff", i, "b"), Tensor::zeros({enc.ff_width}));
    in_dim = enc.ff_width;
  }
  std::size_t head = 3 * enc.latent_dim;
  store.create("enc.head.w", glorot_uniform({in_dim, head}, in_dim, head, rng));
  store.create("enc.head.b", Tensor::zeros({head}));

  in_dim = enc.latent_dim;
  for (std::size_t i = 0; i < dec.ff_layers; ++i) {
    store.create(ff_name("dec.ff", i, "w"), glorot_uniform({in_dim, dec.ff_width}, in_dim,
                                                           dec.ff_width, rng));
    store.create(ff_name("dec.ff", i, "b"), Tensor::zeros({dec.ff_width}));
    in_dim = dec.ff_width;
  }
  store.create("dec.out.w", glorot_uniform({in_dim, dec.output_dim}, in_dim, dec.output_dim, rng));
  store.create("dec.out.b", Tensor::zeros({dec.output_dim}));
}

std::vector<ChannelPosterior> encode(Tape& tape, const EncoderConfig& cfg, ParameterStore& store,
                                     const Tensor& x, const InputSpec& input) {
  cfg.validate();
  Var h;
  std::size_t t_len;
  if (input.image) {
    require(x.rank() == 3 && x.shape[1] == input.height && x.shape[2] == input.width,
            "encode: expected image input of shape Tx" + std::to_string(input.height) + "x" +
                std::to_string(input.width) + ", got " + shape_to_string(x.shape));
    require(cfg.image_preproc.has_value(), "encode: image input requires conv2d preprocessing");
    t_len = x.shape[0];
    Var frames = tape.reshape(tape.constant(x), {t_len, input.height, input.width, 1});
    for (std::size_t i = 0; i < cfg.image_preproc->layers; ++i) {
      frames = tape.relu(tape.conv2d(frames, tape.param(store.get(ff_name("enc.preproc", i, "w"))),
                                     tape.param(store.get(ff_name("enc.preproc", i, "b")))));
    }
    // flatten each frame before the temporal convolution
    h = tape.reshape(frames, {t_len, input.height * input.width * cfg.image_preproc->filters});
  } else {
    require(x.rank() == 2 && x.shape[1] == input.feature_dim,
            "encode: expected input of shape Tx" + std::to_string(input.feature_dim) + ", got " +
                shape_to_string(x.shape));
    t_len = x.shape[0];
    h = tape.constant(x);
  }

  h = tape.relu(tape.conv1d(h, tape.param(store.get("enc.tconv.w")),
                            tape.param(store.get("enc.tconv.b"))));
  for (std::size_t i = 0; i < cfg.ff_layers; ++i) {
    h = tape.relu(tape.add_bias(tape.matmul(h, tape.param(store.get(ff_name("enc.ff", i, "w")))),
                                tape.param(store.get(ff_name("enc.ff", i, "b")))));
  }
  Var head = tape.add_bias(tape.matmul(h, tape.param(store.get("enc.head.w"))),
                           tape.param(store.get("enc.head.b")));

  std::size_t m = cfg.latent_dim;
  std::vector<ChannelPosterior> channels;
  channels.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    ChannelPosterior ch;
    ch.mean = tape.reshape(tape.slice_cols(head, j, j + 1), {t_len});
    Var raw_diag = tape.reshape(tape.slice_cols(head, m + j, m + j + 1), {t_len});
    ch.diag = tape.add_scalar(tape.softplus(raw_diag), kBandDiagFloor);
    Var raw_super = tape.reshape(tape.slice_cols(head, 2 * m + j, 2 * m + j + 1), {t_len});
    ch.super = tape.slice_rows(raw_super, 0, t_len - 1);
    if (cfg.zero_superdiag) ch.super = tape.scale(ch.super, 0.0);
    channels.push_back(ch);
  }
  return channels;
}

std::vector<StructuredGaussian> encode_posteriors(const EncoderConfig& cfg, ParameterStore& store,
                                                  const Tensor& x, const InputSpec& input) {
  Tape tape;
  auto channels = encode(tape, cfg, store, x, input);
  std::vector<StructuredGaussian> out;
  out.reserve(channels.size());
  for (const auto& ch : channels) {
    out.emplace_back(tape.value(ch.mean).values,
                     BandedCholesky(tape.value(ch.diag).values, tape.value(ch.super).values));
  }
  return out;
}

Var decode(Tape& tape, const DecoderConfig& cfg, ParameterStore& store, Var z) {
  cfg.validate();
  const Tensor& zv = tape.value(z);
  require(zv.rank() == 2, "decode: expected T x m latents, got " + shape_to_string(zv.shape));
  Var h = z;
  for (std::size_t i = 0; i < cfg.ff_layers; ++i) {
    h = tape.relu(tape.add_bias(tape.matmul(h, tape.param(store.get(ff_name("dec.ff", i, "w")))),
                                tape.param(store.get(ff_name("dec.ff", i, "b")))));
  }
  return tape.add_bias(tape.matmul(h, tape.param(store.get("dec.out.w"))),
                       tape.param(store.get("dec.out.b")));
}

double gaussian_log_likelihood(const std::vector<double>& x, const std::vector<double>& mean,
                               double variance) {
  if (x.size() != mean.size()) {
    throw std::invalid_argument("gaussian_log_likelihood: dimension mismatch");
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += (x[i] - mean[i]) * (x[i] - mean[i]);
  double n = static_cast<double>(x.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi * variance) - ss / (2.0 * variance);
}

Var gaussian_log_likelihood_op(Tape& tape, Var x, Var mean, double variance) {
  const Tensor& xv = tape.value(x);
  const Tensor& mv = tape.value(mean);
  if (!xv.same_shape(mv)) {
    throw std::invalid_argument("gaussian_log_likelihood: x " + shape_to_string(xv.shape) +
                                " vs mean " + shape_to_string(mv.shape));
  }
  double n = static_cast<double>(xv.numel());
  Var diff = tape.sub(x, mean);
  Var ss = tape.sum(tape.mul(diff, diff));
  return tape.add_scalar(tape.scale(ss, -0.5 / variance),
                         -0.5 * n * std::log(2.0 * std::numbers::pi * variance));
}

ElboNoise draw_elbo_noise(std::size_t mc_samples, std::size_t latent_dim, std::size_t t_len,
                          Rng& rng) {
  ElboNoise noise(mc_samples);
  for (auto& per_channel : noise) {
    per_channel.reserve(latent_dim);
    for (std::size_t j = 0; j < latent_dim; ++j) {
      Tensor eps = Tensor::zeros({t_len});
      for (double& e : eps.values) e = rng.normal();
      per_channel.push_back(std::move(eps));
    }
  }
  return noise;
}

ElboVars elbo_op(Tape& tape, const EncoderConfig& enc, const DecoderConfig& dec,
                 ParameterStore& store, const std::vector<GpPriorOperator>& priors,
                 const Tensor& x, const InputSpec& input, double beta, const ElboNoise& noise) {
  if (noise.empty()) throw std::invalid_argument("elbo: mc_samples must be >= 1");
  if (priors.size() != enc.latent_dim) {
    throw std::invalid_argument("elbo: " + std::to_string(priors.size()) + " priors for " +
                                std::to_string(enc.latent_dim) + " latent channels");
  }
  auto channels = encode(tape, enc, store, x, input);
  std::size_t t_len = tape.value(channels[0].mean).numel();

  Var kl;
  for (std::size_t j = 0; j < channels.size(); ++j) {
    Var channel_kl =
        kl_to_gp_prior_op(tape, channels[j].mean, channels[j].diag, channels[j].super, priors[j]);
    kl = j == 0 ? channel_kl : tape.add(kl, channel_kl);
  }

  Var x_flat = tape.constant(input.image ? Tensor({t_len, input.height * input.width}, x.values)
                                         : x);
  Var recon;
  for (std::size_t s = 0; s < noise.size(); ++s) {
    if (noise[s].size() != channels.size()) {
      throw std::invalid_argument("elbo: noise channel count does not match latent_dim");
    }
    std::vector<Var> cols;
    cols.reserve(channels.size());
    for (std::size_t j = 0; j < channels.size(); ++j) {
      cols.push_back(
          sample_op(tape, channels[j].mean, channels[j].diag, channels[j].super, noise[s][j]));
    }
    Var z = tape.concat_cols(cols);
    Var mean = decode(tape, dec, store, z);
    Var ll = gaussian_log_likelihood_op(tape, x_flat, mean, dec.observation_variance);
    recon = s == 0 ? ll : tape.add(recon, ll);
  }
  recon = tape.scale(recon, 1.0 / static_cast<double>(noise.size()));

  Var total = tape.sub(recon, tape.scale(kl, beta));

  ElboVars out;
  out.reconstruction = recon;
  out.kl = kl;
  out.total = total;
  out.values.reconstruction = tape.value(recon)(0);
  out.values.kl = tape.value(kl)(0);
  out.values.total = tape.value(total)(0);
  if (!std::isfinite(out.values.reconstruction)) {
    throw std::runtime_error("elbo: non-finite reconstruction term");
  }
  if (!std::isfinite(out.values.kl)) throw std::runtime_error("elbo: non-finite kl term");
  return out;
}

ElboBreakdown elbo(const EncoderConfig& enc, const DecoderConfig& dec, ParameterStore& store,
                   const std::vector<GpPriorOperator>& priors, const Tensor& x,
                   const InputSpec& input, double beta, Rng& rng, std::size_t mc_samples) {
  if (mc_samples < 1) throw std::invalid_argument("elbo: mc_samples must be >= 1");
  ElboNoise noise = draw_elbo_noise(mc_samples, enc.latent_dim, x.shape[0], rng);
  Tape tape;
  return elbo_op(tape, enc, dec, store, priors, x, input, beta, noise).values;
}

}  // namespace dgpvae
