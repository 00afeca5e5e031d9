// spikediff command-line driver: train | sample | fuse | eval | count-ops

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "spikediff/checkpoint.hpp"
#include "spikediff/dataset.hpp"
#include "spikediff/image_io.hpp"
#include "spikediff/metrics.hpp"
#include "spikediff/runconfig.hpp"
#include "spikediff/sample.hpp"

namespace spd = spikediff;

namespace {

void write_raw_tensor(const std::string& path, const spd::Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  SPD_REQUIRE(f.good(), "cannot open ", path, " for writing");
  uint32_t rank = static_cast<uint32_t>(t.rank());
  f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int64_t d : t.shape) f.write(reinterpret_cast<const char*>(&d), sizeof(d));
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  SPD_REQUIRE(f.good(), "write failed for ", path);
}

spd::Tensor generate(spd::Checkpoint& ckpt, const std::string& pipeline, int count, int steps,
                     uint64_t seed) {
  spd::NoiseSchedule sched = ckpt.schedule();
  spd::SamplerConfig scfg;
  scfg.num_inference_steps = steps;
  scfg.seed = seed;
  scfg.batch = count;
  spd::Shape hwc{ckpt.unet.image_size, ckpt.unet.image_size, ckpt.unet.in_channels};
  if (pipeline == "reference") {
    spd::UnetSignalModel model(ckpt.params, ckpt.unet);
    return spd::sample_reference(model, sched, scfg, hwc);
  }
  if (pipeline == "signal") {
    spd::UnetSignalModel model(ckpt.params, ckpt.unet);
    return spd::sample_signal_space(model, sched, scfg, hwc);
  }
  if (pipeline == "fused") {
    return spd::sample_fused(ckpt.params, ckpt.unet, sched, scfg);
  }
  spd::raise(spd::str("unknown pipeline '", pipeline, "' (reference | signal | fused)"));
}

spd::Tensor generate_chunked(spd::Checkpoint& ckpt, const std::string& pipeline, int count,
                             int steps, uint64_t seed, int chunk = 64) {
  spd::Tensor out({count, ckpt.unet.image_size, ckpt.unet.image_size, ckpt.unet.in_channels});
  int64_t per = out.numel() / count;
  for (int off = 0; off < count; off += chunk) {
    int bsz = std::min(chunk, count - off);
    spd::Tensor part = generate(ckpt, pipeline, bsz, steps, seed + static_cast<uint64_t>(off));
    std::copy_n(part.ptr(), bsz * per, out.ptr() + off * per);
  }
  return out;
}

int cmd_train(const std::string& config_path, const std::string& resume,
              const std::string& out_dir, int64_t seed_override, int max_steps, int ckpt_every,
              int grid_every) {
  spd::RunConfig rc = spd::parse_config(config_path);
  if (seed_override >= 0) rc.seed = static_cast<uint64_t>(seed_override);

  spd::Tensor dataset = spd::load_dataset(rc.dataset());
  int channels = static_cast<int>(dataset.dim(3));
  std::printf("dataset=%s images=%lld size=%dx%d channels=%d\n", rc.dataset_path.c_str(),
              static_cast<long long>(dataset.dim(0)), rc.image_size, rc.image_size, channels);

  spd::Checkpoint ckpt;
  spd::AdamState adam;
  if (!resume.empty()) {
    ckpt = spd::load_checkpoint(resume);
    if (ckpt.moments) adam = *ckpt.moments;
    std::printf("resumed from %s at step %lld\n", resume.c_str(),
                static_cast<long long>(ckpt.train_step));
  } else {
    ckpt.unet = rc.unet(channels);
    ckpt.diffusion_T = rc.diffusion_T;
    ckpt.params = spd::build_unet(ckpt.unet, rc.seed);
  }
  spd::NoiseSchedule sched = ckpt.schedule();
  spd::TrainConfig tcfg = rc.train();
  tcfg.max_steps = max_steps;

  std::filesystem::create_directories(out_dir);
  auto save = [&](const std::string& name, const spd::AdamState& st, int64_t step) {
    ckpt.moments = st;
    ckpt.train_step = step;
    spd::save_checkpoint(out_dir + "/" + name, ckpt);
  };
  spd::CheckpointSink sink = [&](int64_t step, const spd::ModelParams&, const spd::AdamState& st,
                                 bool last) {
    if (last || (ckpt_every > 0 && step % ckpt_every == 0))
      save(last ? "final.ckpt" : spd::str("step_", step, ".ckpt"), st, step);
    if (grid_every > 0 && step % grid_every == 0) {
      spd::Tensor imgs = generate(ckpt, "signal", 16, rc.sample_steps, rc.seed + 1);
      spd::save_png_grid(imgs, 4, spd::str(out_dir, "/samples_", step, ".png"));
    }
  };

  spd::TrainResult res = spd::train_loop(ckpt.params, ckpt.unet, dataset, sched, tcfg, &adam, sink);
  std::printf("trained steps=%lld final_total=%.6f checkpoint=%s/final.ckpt\n",
              static_cast<long long>(res.steps),
              res.history.empty() ? 0.0 : res.history.back().total, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fully spiking DDIM engine"};
  app.require_subcommand(1);
  app.footer("Flag values take precedence over config-file values.");

  // train
  std::string config_path, resume, out_dir = "runs";
  int64_t seed_override = -1;
  int max_steps = 0, ckpt_every = 500, grid_every = 500;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--out", out_dir, "output directory for checkpoints and grids");
  train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--max-steps", max_steps, "stop after this many optimizer steps");
  train->add_option("--ckpt-every", ckpt_every, "checkpoint interval in steps (0 = final only)");
  train->add_option("--grid-every", grid_every, "sample-grid interval in steps (0 = off)");

  // sample
  std::string ckpt_path, pipeline = "signal", out_png = "samples.png", dump_raw;
  int count = 16, steps = 10, columns = 4;
  uint64_t seed = 0;
  auto* sample = app.add_subcommand("sample", "generate a PNG grid from a checkpoint");
  sample->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  sample->add_option("--pipeline", pipeline, "reference | signal | fused");
  sample->add_option("--count", count, "number of images");
  sample->add_option("--steps", steps, "DDIM inference steps");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--out", out_png, "output PNG path");
  sample->add_option("--columns", columns, "grid columns");
  sample->add_option("--dump-raw", dump_raw, "also write raw float32 images to this path");

  // fuse
  std::string fuse_ckpt, fuse_out;
  int fuse_steps = 10;
  auto* fuse = app.add_subcommand("fuse", "write a checkpoint with precomputed fused step convs");
  fuse->add_option("--ckpt", fuse_ckpt, "model checkpoint")->required();
  fuse->add_option("--out", fuse_out, "output checkpoint path")->required();
  fuse->add_option("--steps", fuse_steps, "DDIM inference steps to fuse");

  // eval
  std::string eval_ckpt, eval_dataset, metric = "fad", eval_format = "idx-images",
              eval_pipeline = "signal";
  int eval_count = 1000, eval_steps = 10;
  uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate generated images against a dataset");
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--dataset", eval_dataset, "dataset path")->required();
  eval->add_option("--format", eval_format, "idx-images | raw-dir");
  eval->add_option("--metric", metric, "fad");
  eval->add_option("--count", eval_count, "generated image count");
  eval->add_option("--steps", eval_steps, "DDIM inference steps");
  eval->add_option("--pipeline", eval_pipeline, "reference | signal | fused");
  eval->add_option("--seed", eval_seed, "seed for AE training and generation");

  // count-ops
  std::string co_ckpt, co_mode = "snn";
  int co_batch = 4, co_steps = 10, co_t = 0;
  uint64_t co_seed = 0;
  auto* co = app.add_subcommand("count-ops", "dynamic add/mul accounting");
  co->add_option("--ckpt", co_ckpt, "model checkpoint")->required();
  co->add_option("--mode", co_mode, "snn | ann");
  co->add_option("--batch", co_batch, "input batch size");
  co->add_option("--steps", co_steps, "trajectory length for the per-image scope");
  co->add_option("--t", co_t, "diffusion step to evaluate at (default T/2)");
  co->add_option("--seed", co_seed, "seed for the probe batch");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return cmd_train(config_path, resume, out_dir, seed_override, max_steps, ckpt_every,
                       grid_every);
    }
    if (*sample) {
      spd::Checkpoint ckpt = spd::load_checkpoint(ckpt_path);
      spd::Tensor imgs = generate_chunked(ckpt, pipeline, count, steps, seed);
      if (!dump_raw.empty()) write_raw_tensor(dump_raw, imgs);
      spd::save_png_grid(imgs, columns, out_png);
      std::printf("pipeline=%s count=%d steps=%d seed=%llu out=%s\n", pipeline.c_str(), count,
                  steps, static_cast<unsigned long long>(seed), out_png.c_str());
      return 0;
    }
    if (*fuse) {
      spd::Checkpoint ckpt = spd::load_checkpoint(fuse_ckpt);
      spd::NoiseSchedule sched = ckpt.schedule();
      std::vector<int> seq = spd::inference_steps(sched.T, fuse_steps);
      spd::FusedPlan plan = spd::build_fused_plan(ckpt.params, ckpt.unet, sched, seq);
      for (size_t p = 0; p < plan.convs.size(); ++p) {
        ckpt.params.tensors[spd::str("fused.", p, ".kernel")] = plan.convs[p].kernel;
        ckpt.params.tensors[spd::str("fused.", p, ".bias_field")] = plan.convs[p].bias_field;
      }
      ckpt.params.tensors["fused.final_kernel"] = plan.final_kernel;
      ckpt.params.tensors["fused.final_bias"] = plan.final_bias;
      spd::Tensor steps_t({static_cast<int64_t>(seq.size())});
      for (size_t i = 0; i < seq.size(); ++i) steps_t[static_cast<int64_t>(i)] = float(seq[i]);
      ckpt.params.tensors["fused.steps"] = steps_t;
      spd::save_checkpoint(fuse_out, ckpt);
      std::printf("fused %zu steps into %s\n", plan.convs.size(), fuse_out.c_str());
      return 0;
    }
    if (*eval) {
      SPD_REQUIRE(metric == "fad", "eval: unknown metric '", metric, "' (supported: fad)");
      spd::Checkpoint ckpt = spd::load_checkpoint(eval_ckpt);
      spd::DatasetSpec dspec;
      dspec.path = eval_dataset;
      dspec.format = spd::DatasetSpec::parse_format(eval_format);
      dspec.image_size = ckpt.unet.image_size;
      spd::Tensor real = spd::load_dataset(dspec);
      spd::Autoencoder ae = spd::train_autoencoder(real, 128, eval_seed);
      spd::Tensor gen = generate_chunked(ckpt, eval_pipeline, eval_count, eval_steps,
                                         eval_seed + 7);
      double fad = spd::compute_fad(ae, real, gen);
      std::printf("metric=fad value=%.6f real=%lld generated=%d\n", fad,
                  static_cast<long long>(real.dim(0)), eval_count);
      return 0;
    }
    if (*co) {
      spd::Checkpoint ckpt = spd::load_checkpoint(co_ckpt);
      SPD_REQUIRE(co_mode == "snn" || co_mode == "ann", "count-ops: mode must be snn or ann");
      spd::NoiseSchedule sched = ckpt.schedule();
      int t = co_t > 0 ? co_t : sched.T / 2;
      spd::Rng rng(co_seed);
      spd::Tensor batch = rng.normal_tensor(
          {co_batch, ckpt.unet.image_size, ckpt.unet.image_size, ckpt.unet.in_channels});
      spd::OpCountReport rep = spd::count_ops(
          ckpt.params, ckpt.unet,
          co_mode == "snn" ? spd::OpCounter::Mode::Snn : spd::OpCounter::Mode::Ann, batch, t,
          co_steps);
      std::fputs(rep.table().c_str(), stdout);
      std::fputs(rep.key_values().c_str(), stdout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
