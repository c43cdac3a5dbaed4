// Command line front end for the whole pipeline: dataset generation,
// contrastive pretraining, feature extraction, retrieval evaluation and
// supervised fine-tuning. One subcommand per stage, artifacts under fixed
// names so stages chain without extra bookkeeping.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iic/config_file.hpp"
#include "iic/contrastive.hpp"
#include "iic/datasets.hpp"
#include "iic/encoder.hpp"
#include "iic/errors.hpp"
#include "iic/retrieval.hpp"
#include "iic/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw iic::DataError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw iic::DataError("short write: " + path.string());
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw iic::DataError("cannot create output directory: " + dir);
  return fs::path(dir);
}

iic::LoadedDataset load_nonempty_split(const iic::DatasetManifest& manifest,
                                       const std::string& split) {
  iic::LoadedDataset data = iic::load_split(manifest, split);
  if (data.size() == 0)
    throw iic::DataError("manifest has no '" + split + "' records");
  return data;
}

std::vector<iic::FeatureRecord> joint_records(
    const std::vector<iic::FeatureRecord>& f1,
    const std::vector<iic::FeatureRecord>& f2) {
  std::vector<iic::FeatureRecord> out(f1.size());
  for (std::size_t i = 0; i < f1.size(); ++i)
    out[i] = iic::joint_feature(f1[i], f2[i]);
  return out;
}

// ---- gen-data ----

struct GenDataOpts {
  std::string spec_file;
  std::string out_dir;
};

void run_gen_data(const GenDataOpts& opts) {
  iic::SyntheticSpec spec;
  if (!opts.spec_file.empty())
    spec = iic::synthetic_spec_from(iic::KeyValueConfig::parse_file(opts.spec_file));
  const fs::path out = ensure_dir(opts.out_dir);
  const iic::DatasetManifest manifest = iic::generate_dataset(spec, out);
  write_text_file(out / "spec_echo.txt", iic::synthetic_spec_echo(spec));

  int n_train = 0, n_test = 0;
  for (const auto& rec : manifest.records)
    (rec.split == "train" ? n_train : n_test) += 1;
  std::cout << "wrote " << manifest.records.size() << " videos (" << n_train
            << " train / " << n_test << " test)\n"
            << "manifest: " << (out / "manifest.tsv").string() << '\n';
}

// ---- train ----

struct TrainOpts {
  std::string config_file;
  std::string data_manifest;
  std::string view2_manifest;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool ablate = false;
};

void run_train(const TrainOpts& opts) {
  iic::TrainConfig config;
  if (!opts.config_file.empty())
    config = iic::train_config_from(iic::KeyValueConfig::parse_file(opts.config_file));
  if (opts.ablate) config.ablate_intra_neg = true;
  if (opts.seed_set) config.seed = opts.seed;
  if (!opts.view2_manifest.empty()) config.view2 = iic::View2Mode::external;
  config.out_dir = opts.out_dir;

  const auto manifest = iic::DatasetManifest::load(opts.data_manifest);
  const iic::LoadedDataset train = load_nonempty_split(manifest, "train");

  iic::LoadedDataset external;
  const iic::LoadedDataset* external_ptr = nullptr;
  if (config.view2 == iic::View2Mode::external) {
    if (opts.view2_manifest.empty())
      throw iic::DataError("view2 = external requires --view2-data");
    const auto manifest2 = iic::DatasetManifest::load(opts.view2_manifest);
    external = load_nonempty_split(manifest2, "train");
    external_ptr = &external;
  }

  const fs::path out = ensure_dir(opts.out_dir);
  write_text_file(out / "config_echo.txt", iic::train_config_echo(config));
  iic::run_training(train, config, external_ptr, &std::cout);
  std::cout << "encoder: " << (out / "encoder.iicwgt").string() << '\n'
            << "banks: " << (out / "banks.iicbnk").string() << '\n'
            << "loss log: " << (out / "train_loss.csv").string() << '\n';
}

// ---- extract ----

struct ExtractOpts {
  std::string checkpoint;
  std::string data_manifest;
  std::string split = "test";
  std::string view;
  int clips_per_video = 4;
  std::string out_file;
};

std::vector<iic::FeatureRecord> extract_records(const iic::EncoderParams& params,
                                                const iic::LoadedDataset& data,
                                                const std::string& view,
                                                int clips_per_video) {
  if (view == "rgb")
    return iic::extract_features(params, data, iic::FeatureView::view1_rgb,
                                 clips_per_video);
  if (view == "res")
    return iic::extract_features(params, data, iic::FeatureView::view2_res,
                                 clips_per_video);
  const auto f1 = iic::extract_features(params, data, iic::FeatureView::view1_rgb,
                                        clips_per_video);
  const auto f2 = iic::extract_features(params, data, iic::FeatureView::view2_res,
                                        clips_per_video);
  return joint_records(f1, f2);
}

void run_extract(const ExtractOpts& opts) {
  const iic::EncoderParams params = iic::load_encoder(opts.checkpoint);
  const auto manifest = iic::DatasetManifest::load(opts.data_manifest);
  const iic::LoadedDataset data = load_nonempty_split(manifest, opts.split);
  const auto records =
      extract_records(params, data, opts.view, opts.clips_per_video);
  iic::save_features(opts.out_file, records);
  std::cout << "wrote " << records.size() << " feature records ("
            << records.front().feature.size() << "-dim, " << opts.view
            << ") to " << opts.out_file << '\n';
}

// ---- retrieve ----

struct RetrieveOpts {
  std::string checkpoint;
  std::string data_manifest;
  std::string views = "all";
  int clips_per_video = 4;
  std::string out_dir;
};

void run_retrieve(const RetrieveOpts& opts) {
  const iic::EncoderParams params = iic::load_encoder(opts.checkpoint);
  const auto manifest = iic::DatasetManifest::load(opts.data_manifest);
  const iic::LoadedDataset gallery_data = load_nonempty_split(manifest, "train");
  const iic::LoadedDataset query_data = load_nonempty_split(manifest, "test");

  const bool want_rgb = opts.views == "rgb" || opts.views == "all";
  const bool want_res = opts.views == "res" || opts.views == "all";
  const bool want_joint = opts.views == "joint" || opts.views == "all";

  std::vector<iic::FeatureRecord> g1, g2, q1, q2;
  if (want_rgb || want_joint) {
    g1 = iic::extract_features(params, gallery_data, iic::FeatureView::view1_rgb,
                               opts.clips_per_video);
    q1 = iic::extract_features(params, query_data, iic::FeatureView::view1_rgb,
                               opts.clips_per_video);
  }
  if (want_res || want_joint) {
    g2 = iic::extract_features(params, gallery_data, iic::FeatureView::view2_res,
                               opts.clips_per_video);
    q2 = iic::extract_features(params, query_data, iic::FeatureView::view2_res,
                               opts.clips_per_video);
  }

  std::vector<iic::LabeledReport> rows;
  if (want_rgb)
    rows.push_back({"view1: rgb",
                    iic::knn_retrieve(q1, g1, iic::kDefaultRetrievalKs)});
  if (want_res)
    rows.push_back({"view2: res",
                    iic::knn_retrieve(q2, g2, iic::kDefaultRetrievalKs)});
  if (want_joint)
    rows.push_back({"joint",
                    iic::knn_retrieve(joint_records(q1, q2),
                                      joint_records(g1, g2),
                                      iic::kDefaultRetrievalKs)});

  const std::string table = iic::report_table(rows);
  std::cout << table;
  if (!opts.out_dir.empty()) {
    const fs::path out = ensure_dir(opts.out_dir);
    write_text_file(out / "retrieval_report.csv", table);
    std::cout << "report: " << (out / "retrieval_report.csv").string() << '\n';
  }
}

// ---- finetune ----

struct FinetuneOpts {
  std::string checkpoint;
  std::string data_manifest;
  std::string config_file;
  std::string mode;
  bool freeze = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

void run_finetune(const FinetuneOpts& opts) {
  const iic::EncoderParams params = iic::load_encoder(opts.checkpoint);
  const auto manifest = iic::DatasetManifest::load(opts.data_manifest);
  const iic::LoadedDataset train = load_nonempty_split(manifest, "train");
  const iic::LoadedDataset test = load_nonempty_split(manifest, "test");

  iic::FinetuneConfig config;
  if (!opts.config_file.empty())
    config = iic::finetune_config_from(iic::KeyValueConfig::parse_file(opts.config_file));
  if (opts.freeze) config.freeze_encoder = true;
  if (opts.seed_set) config.seed = opts.seed;

  const iic::FinetuneMode mode = opts.mode == "rgb"
                                     ? iic::FinetuneMode::view1_rgb
                                     : iic::FinetuneMode::view2_modality;
  const iic::FinetuneResult result =
      iic::finetune_classifier(params, train, test, mode, config);

  const std::string label = opts.mode == "rgb" ? "view1: rgb" : "view2: res";
  char line[160];
  std::snprintf(line, sizeof line,
                "%s,%.4f,%.4f,%d\n", label.c_str(), result.train_accuracy,
                result.test_accuracy, result.unseen_eval_labels);
  std::cout << "mode,train_accuracy,test_accuracy,unseen_eval_labels\n" << line;
  if (!opts.out_dir.empty()) {
    const fs::path out = ensure_dir(opts.out_dir);
    write_text_file(
        out / "finetune_report.csv",
        std::string("mode,train_accuracy,test_accuracy,unseen_eval_labels\n") +
            line);
    std::ostringstream echo;
    echo << "mode = " << opts.mode << '\n'
         << "epochs = " << config.epochs << '\n'
         << "batch_size = " << config.batch_size << '\n'
         << "lr = " << config.lr << '\n'
         << "sgd_momentum = " << config.sgd_momentum << '\n'
         << "weight_decay = " << config.weight_decay << '\n'
         << "freeze_encoder = " << (config.freeze_encoder ? "true" : "false")
         << '\n'
         << "num_classes = " << config.num_classes << '\n'
         << "seed = " << config.seed << '\n';
    write_text_file(out / "config_echo.txt", echo.str());
  }
}

// ---- report ----

struct ReportOpts {
  std::vector<std::string> labels;
  std::vector<std::string> gallery_files;
  std::vector<std::string> query_files;
  std::string out_dir;
};

void run_report(const ReportOpts& opts) {
  if (opts.labels.size() != opts.gallery_files.size() ||
      opts.labels.size() != opts.query_files.size())
    throw std::invalid_argument(
        "--label, --gallery and --query must be given the same number of times");

  std::vector<iic::LabeledReport> rows;
  for (std::size_t i = 0; i < opts.labels.size(); ++i) {
    const auto gallery = iic::load_features(opts.gallery_files[i]);
    const auto queries = iic::load_features(opts.query_files[i]);
    rows.push_back({opts.labels[i],
                    iic::knn_retrieve(queries, gallery, iic::kDefaultRetrievalKs)});
  }

  const std::string table = iic::report_table(rows);
  std::cout << table;
  if (!opts.out_dir.empty()) {
    const fs::path out = ensure_dir(opts.out_dir);
    write_text_file(out / "retrieval_report.csv", table);
    std::cout << "report: " << (out / "retrieval_report.csv").string() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "self-supervised video representation pipeline "
      "(two-view contrastive pretraining with intra-sample negatives)"};
  app.require_subcommand(1);

  auto gen_opts = std::make_shared<GenDataOpts>();
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic motion dataset");
  gen->add_option("--spec", gen_opts->spec_file, "key=value spec file (defaults when omitted)");
  gen->add_option("--out", gen_opts->out_dir, "output directory")->required();
  gen->callback([gen_opts] { run_gen_data(*gen_opts); });

  auto train_opts = std::make_shared<TrainOpts>();
  auto* train = app.add_subcommand("train", "contrastive pretraining");
  train->add_option("--config", train_opts->config_file, "key=value training config");
  train->add_option("--data", train_opts->data_manifest, "dataset manifest (train split is used)")
      ->required();
  train->add_option("--view2-data", train_opts->view2_manifest,
                    "aligned manifest supplying externally computed second views");
  train->add_option("--out", train_opts->out_dir, "output directory")->required();
  auto* train_seed =
      train->add_option("--seed", train_opts->seed, "override the config seed");
  train->add_flag("--ablate-intra-neg", train_opts->ablate,
                  "drop intra-sample negatives from the loss");
  train->callback([train_opts, train_seed] {
    train_opts->seed_set = train_seed->count() > 0;
    run_train(*train_opts);
  });

  auto extract_opts = std::make_shared<ExtractOpts>();
  auto* extract = app.add_subcommand("extract", "encode per-video descriptors");
  extract->add_option("--checkpoint", extract_opts->checkpoint, "encoder weights file")
      ->required();
  extract->add_option("--data", extract_opts->data_manifest, "dataset manifest")->required();
  extract->add_option("--split", extract_opts->split, "manifest split (default test)")
      ->check(CLI::IsMember({"train", "test"}));
  extract->add_option("--view", extract_opts->view, "rgb, res or joint")
      ->required()
      ->check(CLI::IsMember({"rgb", "res", "joint"}));
  extract->add_option("--clips-per-video", extract_opts->clips_per_video,
                      "windows averaged per video (default 4)")
      ->check(CLI::PositiveNumber);
  extract->add_option("--out", extract_opts->out_file, "output feature file")->required();
  extract->callback([extract_opts] { run_extract(*extract_opts); });

  auto retrieve_opts = std::make_shared<RetrieveOpts>();
  auto* retrieve = app.add_subcommand(
      "retrieve", "nearest-neighbor evaluation, test queries against train gallery");
  retrieve->add_option("--checkpoint", retrieve_opts->checkpoint, "encoder weights file")
      ->required();
  retrieve->add_option("--data", retrieve_opts->data_manifest, "dataset manifest")->required();
  retrieve->add_option("--views", retrieve_opts->views, "rgb, res, joint or all (default all)")
      ->check(CLI::IsMember({"rgb", "res", "joint", "all"}));
  retrieve->add_option("--clips-per-video", retrieve_opts->clips_per_video,
                       "windows averaged per video (default 4)")
      ->check(CLI::PositiveNumber);
  retrieve->add_option("--out", retrieve_opts->out_dir,
                       "directory for retrieval_report.csv (optional)");
  retrieve->callback([retrieve_opts] { run_retrieve(*retrieve_opts); });

  auto finetune_opts = std::make_shared<FinetuneOpts>();
  auto* finetune = app.add_subcommand("finetune", "supervised linear/full fine-tuning");
  finetune->add_option("--checkpoint", finetune_opts->checkpoint, "encoder weights file")
      ->required();
  finetune->add_option("--data", finetune_opts->data_manifest, "dataset manifest")->required();
  finetune->add_option("--config", finetune_opts->config_file, "key=value finetune config");
  finetune->add_option("--mode", finetune_opts->mode, "input view, rgb or res")
      ->required()
      ->check(CLI::IsMember({"rgb", "res"}));
  finetune->add_flag("--freeze-encoder", finetune_opts->freeze,
                     "train only the linear head");
  auto* finetune_seed =
      finetune->add_option("--seed", finetune_opts->seed, "override the config seed");
  finetune->add_option("--out", finetune_opts->out_dir,
                       "directory for finetune_report.csv (optional)");
  finetune->callback([finetune_opts, finetune_seed] {
    finetune_opts->seed_set = finetune_seed->count() > 0;
    run_finetune(*finetune_opts);
  });

  auto report_opts = std::make_shared<ReportOpts>();
  auto* report = app.add_subcommand("report", "rank saved feature files");
  report->add_option("--label", report_opts->labels, "row label (repeatable)")->required();
  report->add_option("--gallery", report_opts->gallery_files,
                     "gallery feature file (repeatable, pairs with --label)")
      ->required();
  report->add_option("--query", report_opts->query_files,
                     "query feature file (repeatable, pairs with --label)")
      ->required();
  report->add_option("--out", report_opts->out_dir,
                     "directory for retrieval_report.csv (optional)");
  report->callback([report_opts] { run_report(*report_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const iic::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const iic::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
