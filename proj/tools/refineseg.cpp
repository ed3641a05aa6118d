#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "refineseg/checkpoint.hpp"
#include "refineseg/data.hpp"
#include "refineseg/evaluator.hpp"
#include "refineseg/propagator.hpp"
#include "refineseg/service.hpp"
#include "refineseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace refineseg;

namespace {

struct TrainArgs {
  std::string backbone = "unet";
  fs::path data, validation, out;
  TrainConfig cfg;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.cfg;
  cfg.backbone_kind = parse_backbone_kind(a.backbone);
  const auto train = read_dataset(a.data);
  std::vector<Sample> val;
  if (!a.validation.empty()) val = read_dataset(a.validation);
  const FitResult r = fit(train, val, cfg, [](const EpochRecord& rec) {
    std::cout << epoch_record_json(rec) << std::endl;
  });
  save_checkpoint(a.out, r.params);
  return 0;
}

int run_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out) {
  const MaskVolume pred = read_mask_volume(pred_dir);
  const MaskVolume gt = read_mask_volume(gt_dir);
  const MetricsRecord pooled = evaluate_volume(pred, gt);
  nlohmann::ordered_json j{{"dice", pooled.dice}, {"sen", pooled.sen}, {"ppv", pooled.ppv}};
  j["per_slice"] = nlohmann::json::array();
  for (size_t i = 0; i < pred.size(); ++i) {
    const MetricsRecord m = metrics(pred[i], gt[i]);
    j["per_slice"].push_back(
        nlohmann::ordered_json{{"slice", i}, {"dice", m.dice}, {"sen", m.sen}, {"ppv", m.ppv}});
  }
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!(f << text)) throw Error(ErrorCode::kIo, "cannot write " + out.string());
  }
  return 0;
}

struct PropagateArgs {
  fs::path ckpt, volume, ref_mask, out;
  int ref_index = 0;
  PropagateConfig cfg;
};

int run_propagate(const PropagateArgs& a) {
  const ModelParams params = load_checkpoint(a.ckpt);
  const ImageVolume vol = read_image_volume(a.volume);
  NetConfig cfg = infer_config(params);
  // Checkpoints do not record the training resolution; size the net to the volume.
  if (!vol.empty()) cfg.input_size = vol.front().height;
  const RefineNet net(cfg, params);
  const BinaryMask ref = read_mask(a.ref_mask);
  write_mask_volume(a.out, propagate(net, vol, a.ref_index, ref, a.cfg));
  return 0;
}

struct GenArgs {
  fs::path out;
  int count = 200;
  int size = 64;
  int slices = 0;
  std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
  if (a.count < 1) throw Error(ErrorCode::kInvalidArgument, "--count must be >= 1");
  if (a.slices == 0) {
    std::vector<Sample> samples;
    for (int i = 0; i < a.count; ++i) samples.push_back(make_phantom(a.seed + i, a.size));
    write_dataset(a.out, samples);
    return 0;
  }
  for (int i = 0; i < a.count; ++i) {
    const PhantomVolume v = make_phantom_volume(a.seed + i, a.size, a.slices);
    char name[32];
    std::snprintf(name, sizeof name, "volume_%04d", i);
    write_image_volume(a.out / name / "images", v.images);
    write_mask_volume(a.out / name / "masks", v.masks);
  }
  return 0;
}

HttpService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int run_serve(const fs::path& ckpt, const std::string& host, int port) {
  std::shared_ptr<const RefineNet> net;
  if (!ckpt.empty()) {
    const ModelParams params = load_checkpoint(ckpt);
    net = std::make_shared<RefineNet>(infer_config(params), params);
  } else {
    std::cerr << "warning: no --ckpt given, session requests will return 503\n";
  }
  HttpService service(std::make_shared<SessionStore>(net));
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on " << host << ":" << port << std::endl;
  service.listen(host, port);
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive refinement segmentation: training, evaluation, "
               "volume propagation, phantom generation and the session server"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train backbone and refinement head jointly");
  t->add_option("--backbone", train.backbone, "unet or fcn")
      ->check(CLI::IsMember({"unet", "fcn"}));
  t->add_option("--data", train.data, "Dataset directory (images/, masks/)")->required();
  t->add_option("--val", train.validation, "Validation dataset directory");
  t->add_option("--out", train.out, "Checkpoint to write")->required();
  t->add_option("--epochs", train.cfg.epochs, "Epochs")->capture_default_str();
  t->add_option("--seed", train.cfg.rng_seed, "RNG seed")->capture_default_str();
  t->add_option("--batch-size", train.cfg.batch_size)->capture_default_str();
  t->add_option("--lr", train.cfg.lr)->capture_default_str();
  t->add_option("--sigma", train.cfg.sigma, "Seed Gaussian sigma")->capture_default_str();
  t->add_option("--lambda", train.cfg.deep_supervision_weight,
                "Side-output loss weight")->capture_default_str();
  t->add_option("--base-channels", train.cfg.base_channels)->capture_default_str();
  t->add_option("--backbone-only-epochs", train.cfg.backbone_only_epochs)
      ->capture_default_str();
  t->add_option("--reference-seed-fraction", train.cfg.reference_seed_fraction)
      ->capture_default_str();

  fs::path pred_dir, gt_dir, eval_out;
  auto* e = app.add_subcommand("eval", "Dice/SEN/PPV of a predicted mask volume");
  e->add_option("--pred", pred_dir, "Predicted mask volume directory")->required();
  e->add_option("--gt", gt_dir, "Ground-truth mask volume directory")->required();
  e->add_option("--out", eval_out, "JSON report (stdout when omitted)");

  PropagateArgs prop;
  auto* p = app.add_subcommand("propagate", "Slice-by-slice segmentation from one slice");
  p->add_option("--ckpt", prop.ckpt)->required();
  p->add_option("--volume", prop.volume, "Image volume directory")->required();
  p->add_option("--ref-index", prop.ref_index)->required();
  p->add_option("--ref-mask", prop.ref_mask, "Mask of the reference slice")->required();
  p->add_option("--out", prop.out, "Output mask volume directory")->required();
  p->add_option("--sigma", prop.cfg.sigma)->capture_default_str();
  p->add_option("--radius", prop.cfg.dilation_radius, "Background ring radius")
      ->capture_default_str();
  p->add_flag("--parallel", prop.cfg.parallel, "Run both directions concurrently");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Write synthetic phantoms");
  g->add_option("--out", gen.out)->required();
  g->add_option("--count", gen.count)->capture_default_str();
  g->add_option("--size", gen.size)->capture_default_str();
  g->add_option("--slices", gen.slices,
                "0 writes a 2D dataset; K >= 3 writes COUNT volumes of K slices")
      ->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();

  fs::path serve_ckpt;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* s = app.add_subcommand("serve", "HTTP session server");
  s->add_option("--ckpt", serve_ckpt);
  s->add_option("--host", host)->capture_default_str();
  s->add_option("--port", port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t) return run_train(train);
    if (*e) return run_eval(pred_dir, gt_dir, eval_out);
    if (*p) return run_propagate(prop);
    if (*g) return run_gen(gen);
    if (*s) return run_serve(serve_ckpt, host, port);
  } catch (const Error& ex) {
    std::cerr << "error [" << error_code_name(ex.code()) << "]: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
