#pragma once

// Subcommand implementations for the segvm tool. Kept in a header so the
// test suite can drive the same entry point in-process.

#include "segvm/segvm.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace segvm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct GlobalOptions {
  bool json_output = false;
  bool no_timing = false;
  int threads = 0;
};

// ---------------------------------------------------------------------------
// Segment cache: segments.json + per-clip FVEC matrices of segment means

struct SegmentCache {
  std::string segmenter;
  json config;
  std::vector<SegmentedClip> clips;
};

inline void write_segment_cache(const SegmentCache& cache, const fs::path& dir, const json& run_config) {
  fs::create_directories(dir / "inputs");
  fs::create_directories(dir / "boundaries");
  json clips = json::array();
  for (const auto& c : cache.clips) {
    const std::string music = "inputs/" + c.clip_id + ".music.fvec";
    const std::string video = "inputs/" + c.clip_id + ".video.fvec";
    save_features({c.clip_id, Modality::music, 1.0f, c.music_inputs.cast<float>()}, dir / music);
    save_features({c.clip_id, Modality::video, 1.0f, c.video_inputs.cast<float>()}, dir / video);
    save_annotation(to_annotation(c.boundaries), dir / "boundaries" / (c.clip_id + ".json"));
    clips.push_back({{"clip_id", c.clip_id},
                     {"num_frames", c.boundaries.num_frames},
                     {"cut_frames", c.boundaries.cut_frames},
                     {"warning", c.boundaries.warning},
                     {"music", music},
                     {"video", video}});
  }
  detail::write_json(dir / "segments.json", {{"segmenter", cache.segmenter},
                                             {"segmenter_config", cache.config},
                                             {"run_config", run_config},
                                             {"clips", clips}});
}

inline SegmentCache read_segment_cache(const fs::path& index) {
  const json doc = detail::read_json(index);
  const fs::path base = fs::absolute(index).parent_path();
  SegmentCache cache;
  cache.segmenter = doc.at("segmenter").get<std::string>();
  cache.config = doc.value("segmenter_config", json::object());
  for (const auto& item : doc.at("clips")) {
    SegmentedClip c;
    c.clip_id = item.at("clip_id").get<std::string>();
    c.boundaries.clip_id = c.clip_id;
    c.boundaries.segmenter = cache.segmenter;
    c.boundaries.num_frames = item.at("num_frames").get<std::size_t>();
    c.boundaries.cut_frames = item.at("cut_frames").get<std::vector<std::size_t>>();
    c.boundaries.warning = item.value("warning", false);
    c.music_inputs = load_features(base / item.at("music").get<std::string>()).frames.cast<double>();
    c.video_inputs = load_features(base / item.at("video").get<std::string>()).frames.cast<double>();
    require(static_cast<std::size_t>(c.music_inputs.rows()) == c.boundaries.num_segments() &&
                c.video_inputs.rows() == c.music_inputs.rows(),
            ErrorCode::invariant, "segment cache for '" + c.clip_id + "' is inconsistent with its boundaries");
    cache.clips.push_back(std::move(c));
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Embedding store

struct EmbeddingStore {
  std::string segmenter;
  std::vector<EmbeddedClip> clips;
};

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.row(i).data(), m.row(i).data() + m.cols());
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const json& rows) {
  require(rows.is_array() && !rows.empty(), ErrorCode::invariant, "embedding matrix must be a non-empty array");
  const auto cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == cols, ErrorCode::invariant, "ragged embedding matrix");
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  }
  return m;
}

inline void write_embeddings(const EmbeddingStore& store, const fs::path& path, const json& run_config) {
  json clips = json::array();
  for (const auto& c : store.clips)
    clips.push_back({{"clip_id", c.clip_id()}, {"music", matrix_to_json(c.music.embeddings)},
                     {"video", matrix_to_json(c.video.embeddings)}});
  detail::write_file(path, json{{"segmenter", store.segmenter}, {"run_config", run_config}, {"clips", clips}}.dump() + "\n");
}

inline EmbeddingStore read_embeddings(const fs::path& path) {
  const json doc = detail::read_json(path);
  EmbeddingStore store;
  store.segmenter = doc.at("segmenter").get<std::string>();
  for (const auto& item : doc.at("clips")) {
    const auto id = item.at("clip_id").get<std::string>();
    store.clips.push_back({{id, Modality::music, store.segmenter, matrix_from_json(item.at("music"))},
                           {id, Modality::video, store.segmenter, matrix_from_json(item.at("video"))}});
  }
  return store;
}

// ---------------------------------------------------------------------------

inline void emit(std::ostream& out, const GlobalOptions& g, const json& doc, const std::string& human) {
  if (g.json_output) out << doc.dump(2) << "\n";
  else if (!human.empty()) out << human << "\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"segvm: segment-level video-to-music recommendation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_flag("--json", g.json_output, "Print machine-readable JSON on standard output");
  app.add_flag("--no-timing", g.no_timing, "Write zero for every wall-clock field (byte-reproducible outputs)");
  app.add_option("--threads", g.threads, "Worker threads (default: $SEGVM_THREADS or 1)")->check(CLI::NonNegativeNumber);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired-clip catalog");
  SyntheticSpec sspec;
  std::string synth_out;
  std::size_t test_clips = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--clips", sspec.num_clips, "Number of clips")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sspec.seed, "Random seed");
  synth->add_option("--segments-min", sspec.segments_min, "Minimum segments per clip")->check(CLI::PositiveNumber);
  synth->add_option("--segments-max", sspec.segments_max, "Maximum segments per clip")->check(CLI::PositiveNumber);
  synth->add_option("--duration-min", sspec.segment_duration_min_s, "Minimum segment duration (s)");
  synth->add_option("--duration-max", sspec.segment_duration_max_s, "Maximum segment duration (s)");
  synth->add_option("--audio-dim", sspec.audio_dim, "Music feature dim")->check(CLI::PositiveNumber);
  synth->add_option("--video-dim", sspec.video_dim, "Video feature dim")->check(CLI::PositiveNumber);
  synth->add_option("--noise", sspec.noise_std, "Frame noise standard deviation")->check(CLI::NonNegativeNumber);
  synth->add_option("--latent-dim", sspec.latent_dim, "Latent content dim")->check(CLI::PositiveNumber);
  synth->add_option("--codebook", sspec.codebook_size, "Shared segment-type pool size (0: independent latents)");
  synth->add_option("--jitter", sspec.latent_jitter, "Per-segment jitter around its codebook entry")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--test-clips", test_clips, "Also write train/test manifests holding out the last M clips");

  // validate ---------------------------------------------------------------
  auto* validate_cmd = app.add_subcommand("validate", "Check a manifest and every file it references");
  std::string validate_manifest_path;
  validate_cmd->add_option("--manifest", validate_manifest_path, "Manifest JSON")->required();

  // segment ----------------------------------------------------------------
  auto* segment = app.add_subcommand("segment", "Segment every clip and cache per-segment mean features");
  std::string seg_manifest, seg_out, seg_name = "foote", seg_source = "music";
  SegmenterConfig seg_config;
  segment->add_option("--manifest", seg_manifest, "Manifest JSON")->required();
  segment->add_option("--out", seg_out, "Output directory")->required();
  segment->add_option("--segmenter", seg_name, "foote | fixed | whole_clip | external:<name>");
  segment->add_option("--source", seg_source, "Modality the boundaries are computed on")
      ->check(CLI::IsMember({"music", "video"}));
  segment->add_option("--kernel-half-width", seg_config.foote.kernel_half_width, "Foote kernel half width (frames)")
      ->check(CLI::PositiveNumber);
  segment->add_option("--taper-std", seg_config.foote.gaussian_taper_std, "Foote Gaussian taper std (frames)");
  segment->add_option("--peak-threshold", seg_config.foote.peak_threshold, "Foote peak threshold factor");
  segment->add_option("--fixed-length", seg_config.fixed_length_frames, "Fixed segment length (frames)")
      ->check(CLI::PositiveNumber);
  segment->add_option("--min-segment", seg_config.min_segment_frames, "Minimum segment length (frames)")
      ->check(CLI::PositiveNumber);

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train the two-branch network on cached segments");
  std::string train_segments, val_segments, train_out, train_log, train_config_path;
  std::size_t val_count = 0;
  TrainConfig tc;
  std::uint64_t init_seed = 0;
  train_cmd->add_option("--segments", train_segments, "segments.json of the training catalog")->required();
  train_cmd->add_option("--val-segments", val_segments, "segments.json of the validation catalog");
  train_cmd->add_option("--val-count", val_count, "Hold out the last N training clips for validation");
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_log, "Training log (JSON lines)");
  train_cmd->add_option("--config", train_config_path, "Training config JSON (flags win)");
  auto* o_batch = train_cmd->add_option("--batch-size", tc.batch_size, "Batch size b");
  auto* o_margin = train_cmd->add_option("--margin", tc.margin, "Triplet margin");
  auto* o_lr = train_cmd->add_option("--lr", tc.learning_rate, "Learning rate");
  auto* o_epochs = train_cmd->add_option("--epochs", tc.max_epochs, "Maximum epochs");
  auto* o_patience = train_cmd->add_option("--patience", tc.patience, "Early-stopping patience (epochs)");
  auto* o_dropout = train_cmd->add_option("--dropout", tc.dropout, "Dropout rate");
  auto* o_seed = train_cmd->add_option("--seed", tc.seed, "Training seed (also initializes weights)");
  auto* o_lvm = train_cmd->add_option("--lambda-vm", tc.lambda_vm, "Weight of the video-anchor loss");
  auto* o_lmv = train_cmd->add_option("--lambda-mv", tc.lambda_mv, "Weight of the music-anchor loss");
  auto* o_same = train_cmd->add_flag("--same-clip-negatives", tc.same_clip_negatives,
                                     "Also use other segments of the anchor's clip as negatives");

  // embed ------------------------------------------------------------------
  auto* embed = app.add_subcommand("embed", "Embed every cached segment with a checkpoint");
  std::string embed_ckpt, embed_segments, embed_out;
  bool embed_force = false;
  embed->add_option("--checkpoint", embed_ckpt, "Checkpoint")->required();
  embed->add_option("--segments", embed_segments, "segments.json")->required();
  embed->add_option("--out", embed_out, "Embeddings JSON")->required();
  embed->add_flag("--force", embed_force, "Accept a checkpoint trained with another segmenter");

  // rank -------------------------------------------------------------------
  auto* rank = app.add_subcommand("rank", "Rank the music catalog for one video query");
  std::string rank_embeddings, rank_query, rank_distance = "trace", rank_scenario = "vanilla", rank_out;
  std::size_t rank_top = 10;
  DistanceParams dparams;
  rank->add_option("--embeddings", rank_embeddings, "Embeddings JSON")->required();
  rank->add_option("--query", rank_query, "Query clip id")->required();
  rank->add_option("--distance", rank_distance, "Ranking distance");
  rank->add_option("--scenario", rank_scenario, "Perturbation scenario");
  rank->add_option("--top", rank_top, "Number of results to print (0: all)");
  rank->add_option("--out", rank_out, "Also write the ranked list here");
  rank->add_option("--nw-indel", dparams.nw_indel, "NW-DTW indel cost");
  rank->add_option("--sw-indel", dparams.sw_indel, "SW-DTW indel cost");

  // evaluate ---------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Retrieval metrics over a test catalog");
  std::string eval_embeddings, eval_ckpt, eval_segments, eval_out, eval_csv;
  std::vector<std::string> eval_scenarios{"vanilla"};
  std::vector<std::string> eval_distances;
  std::size_t eval_n = 0;
  evaluate->add_option("--embeddings", eval_embeddings, "Embeddings JSON of the test catalog");
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint (with --segments, instead of --embeddings)");
  evaluate->add_option("--segments", eval_segments, "segments.json of the test catalog");
  evaluate->add_option("--scenario", eval_scenarios, "Scenarios (or 'all')")->delimiter(',');
  evaluate->add_option("--distances", eval_distances, "Distances (default: all)")->delimiter(',');
  evaluate->add_option("--n", eval_n, "Catalog size N (default: whole catalog)");
  evaluate->add_option("--out", eval_out, "Report JSON");
  evaluate->add_option("--csv", eval_csv, "Report table CSV");
  evaluate->add_option("--nw-indel", dparams.nw_indel, "NW-DTW indel cost");
  evaluate->add_option("--sw-indel", dparams.sw_indel, "SW-DTW indel cost");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  const int threads = resolve_threads(g.threads);
  auto stamp = [&](const std::string& command, json options) {
    return json{{"command", command}, {"options", std::move(options)}, {"threads_independent", true}};
  };

  try {
    if (synth->parsed()) {
      validate(sspec);
      require(test_clips < sspec.num_clips, ErrorCode::invalid_argument, "--test-clips must be < --clips");
      const auto catalog = generate_synthetic_catalog(sspec);
      const fs::path dir(synth_out);
      fs::create_directories(dir);
      const ClipManifest manifest = write_synthetic_catalog(catalog, dir);
      save_manifest(manifest, dir / "manifest.json");
      if (test_clips > 0) {
        const auto split = static_cast<std::ptrdiff_t>(sspec.num_clips - test_clips);
        save_manifest({{manifest.entries.begin(), manifest.entries.begin() + split}}, dir / "manifest_train.json");
        save_manifest({{manifest.entries.begin() + split, manifest.entries.end()}}, dir / "manifest_test.json");
      }
      json opts = to_json(sspec);
      opts["test_clips"] = test_clips;
      detail::write_json(dir / "run_config.json", stamp("synth", opts));
      emit(out, g, {{"clips", manifest.entries.size()}, {"manifest", (dir / "manifest.json").string()}},
           "wrote " + std::to_string(manifest.entries.size()) + " clips to " + dir.string());
      return kExitOk;
    }

    if (validate_cmd->parsed()) {
      const auto problems = validate_manifest(load_manifest(validate_manifest_path));
      std::string human = problems.empty() ? "manifest OK" : "";
      for (const auto& p : problems) human += p + "\n";
      emit(out, g, {{"valid", problems.empty()}, {"problems", problems}}, human);
      return problems.empty() ? kExitOk : kExitFailure;
    }

    if (segment->parsed()) {
      SegmenterConfig config = parse_segmenter(seg_name);
      config.source = seg_source == "video" ? Modality::video : Modality::music;
      config.foote = seg_config.foote;
      config.fixed_length_frames = seg_config.fixed_length_frames;
      config.min_segment_frames = seg_config.min_segment_frames;
      const ClipManifest manifest = load_manifest(seg_manifest);
      std::vector<std::optional<SegmentedClip>> slots(manifest.entries.size());
      std::vector<std::string> errors(manifest.entries.size());
      parallel_for(manifest.entries.size(), threads, [&](std::size_t i) {
        const auto& entry = manifest.entries[i];
        try {
          const LoadedClip clip = load_clip(entry);
          slots[i] = aggregate(clip.music, clip.video, segment_clip(config, clip.music, clip.video, &entry));
        } catch (const Error& e) {
          errors[i] = entry.clip_id + ": " + e.what();
        }
      });
      std::vector<std::string> failed;
      for (const auto& e : errors)
        if (!e.empty()) failed.push_back(e);
      if (!failed.empty()) {
        for (const auto& e : failed) err << "error: " << e << "\n";
        emit(out, g, {{"ok", false}, {"errors", failed}}, "");
        return kExitFailure;
      }
      SegmentCache cache{config.name(), to_json(config), {}};
      std::size_t segments = 0, warnings = 0;
      for (auto& s : slots) {
        segments += s->num_segments();
        warnings += s->boundaries.warning;
        cache.clips.push_back(std::move(*s));
      }
      write_segment_cache(cache, seg_out, stamp("segment", {{"manifest", seg_manifest}, {"segmenter", to_json(config)}}));
      emit(out, g,
           {{"ok", true}, {"clips", cache.clips.size()}, {"segments", segments}, {"warnings", warnings}},
           "segmented " + std::to_string(cache.clips.size()) + " clips into " + std::to_string(segments) +
               " segments (" + cache.segmenter + ")");
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      TrainConfig config;
      if (!train_config_path.empty()) config = train_config_from_json(detail::read_json(train_config_path));
      if (o_batch->count()) config.batch_size = tc.batch_size;
      if (o_margin->count()) config.margin = tc.margin;
      if (o_lr->count()) config.learning_rate = tc.learning_rate;
      if (o_epochs->count()) config.max_epochs = tc.max_epochs;
      if (o_patience->count()) config.patience = tc.patience;
      if (o_dropout->count()) config.dropout = tc.dropout;
      if (o_seed->count()) config.seed = tc.seed;
      if (o_lvm->count()) config.lambda_vm = tc.lambda_vm;
      if (o_lmv->count()) config.lambda_mv = tc.lambda_mv;
      if (o_same->count()) config.same_clip_negatives = tc.same_clip_negatives;
      init_seed = config.seed;

      SegmentCache train_cache = read_segment_cache(train_segments);
      std::vector<SegmentedClip> val_set;
      if (!val_segments.empty()) {
        SegmentCache val_cache = read_segment_cache(val_segments);
        require(val_cache.segmenter == train_cache.segmenter, ErrorCode::mismatch,
                "training and validation catalogs use different segmenters");
        val_set = std::move(val_cache.clips);
      } else {
        require(val_count >= 2 && val_count < train_cache.clips.size(), ErrorCode::invalid_argument,
                "give --val-segments or a --val-count in [2, training clips)");
        const auto split = train_cache.clips.end() - static_cast<std::ptrdiff_t>(val_count);
        val_set.assign(std::make_move_iterator(split), std::make_move_iterator(train_cache.clips.end()));
        train_cache.clips.erase(split, train_cache.clips.end());
      }
      NetworkSpec net;
      net.music.input_dim = static_cast<std::size_t>(train_cache.clips.front().music_inputs.cols());
      net.video.input_dim = static_cast<std::size_t>(train_cache.clips.front().video_inputs.cols());
      net.dropout = config.dropout;

      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file.open(train_log, std::ios::trunc);
        require(static_cast<bool>(log_file), ErrorCode::io, "cannot open log '" + train_log + "'");
      }
      const TrainResult result =
          train(config, init_params(net, init_seed), train_cache.clips, val_set, [&](const EpochRecord& r) {
            EpochRecord shown = r;
            if (g.no_timing) shown.wall_s = 0.0;
            if (log_file) log_file << to_json(shown).dump() << "\n" << std::flush;
            if (!g.json_output)
              err << "epoch " << r.epoch << " val_loss " << r.val_loss
                  << (std::isnan(r.train_loss) ? std::string() : " train_loss " + std::to_string(r.train_loss))
                  << "\n";
          });
      Checkpoint ckpt{result.best_params, train_cache.segmenter, to_json(config), result.best_epoch,
                      stamp("train", {{"segments", train_segments},
                                      {"val_segments", val_segments},
                                      {"val_count", val_count},
                                      {"train", to_json(config)},
                                      {"network", to_json(net)}})};
      save_checkpoint(ckpt, train_out);
      emit(out, g,
           {{"checkpoint", train_out}, {"best_epoch", result.best_epoch}, {"best_val_loss", result.best_val_loss},
            {"epochs_run", result.log.size() - 1}},
           "best epoch " + std::to_string(result.best_epoch) + ", validation loss " +
               std::to_string(result.best_val_loss) + " -> " + train_out);
      return kExitOk;
    }

    if (embed->parsed()) {
      const SegmentCache cache = read_segment_cache(embed_segments);
      const Checkpoint ckpt = load_checkpoint(embed_ckpt, cache.segmenter, embed_force);
      EmbeddingStore store{cache.segmenter, embed_catalog(ckpt.params, cache.clips, cache.segmenter, threads)};
      write_embeddings(store, embed_out,
                       stamp("embed", {{"checkpoint", embed_ckpt},
                                       {"segments", embed_segments},
                                       {"checkpoint_epoch", ckpt.epoch},
                                       {"checkpoint_run_config", ckpt.run_config}}));
      emit(out, g, {{"clips", store.clips.size()}, {"embeddings", embed_out}},
           "embedded " + std::to_string(store.clips.size()) + " clips -> " + embed_out);
      return kExitOk;
    }

    if (rank->parsed()) {
      const EmbeddingStore store = read_embeddings(rank_embeddings);
      const Scenario scenario = parse_scenario(rank_scenario);
      const Distance distance = parse_distance(rank_distance);
      std::vector<EmbeddingSequence> catalog;
      std::optional<EmbeddingSequence> query;
      for (const auto& c : store.clips) {
        catalog.push_back(stretches_targets(scenario) ? perturb_stretch_targets(c.music) : c.music);
        if (c.clip_id() == rank_query) query = c.video;
      }
      require(query.has_value(), ErrorCode::invalid_argument, "query '" + rank_query + "' not in the embeddings");
      if (crops_query(scenario)) {
        query = perturb_crop_query(*query);
        require(query.has_value(), ErrorCode::invalid_argument,
                "query '" + rank_query + "' has two or fewer segments and cannot be cropped");
      }
      const RankedList ranked = rank_catalog(*query, catalog, distance, dparams, threads);
      json doc = to_json(ranked, rank_top, !g.no_timing);
      doc["scenario"] = rank_scenario;
      doc["run_config"] = stamp("rank", {{"embeddings", rank_embeddings},
                                         {"query", rank_query},
                                         {"distance", rank_distance},
                                         {"scenario", rank_scenario},
                                         {"top", rank_top},
                                         {"nw_indel", dparams.nw_indel},
                                         {"sw_indel", dparams.sw_indel}});
      if (!rank_out.empty()) detail::write_json(rank_out, doc);
      out << doc.dump(2) << "\n";
      return kExitOk;
    }

    if (evaluate->parsed()) {
      std::vector<EmbeddedClip> clips;
      std::string segmenter;
      if (!eval_embeddings.empty()) {
        EmbeddingStore store = read_embeddings(eval_embeddings);
        segmenter = store.segmenter;
        clips = std::move(store.clips);
      } else {
        require(!eval_ckpt.empty() && !eval_segments.empty(), ErrorCode::invalid_argument,
                "give --embeddings or both --checkpoint and --segments");
        const SegmentCache cache = read_segment_cache(eval_segments);
        const Checkpoint ckpt = load_checkpoint(eval_ckpt, cache.segmenter);
        segmenter = cache.segmenter;
        clips = embed_catalog(ckpt.params, cache.clips, segmenter, threads);
      }
      const std::size_t n = eval_n == 0 ? clips.size() : eval_n;
      if (n > clips.size()) {
        err << "usage error: --n " << n << " exceeds the catalog size " << clips.size() << "\n";
        return kExitUsage;
      }
      std::vector<Distance> distances;
      if (eval_distances.empty()) distances.assign(std::begin(kAllDistances), std::end(kAllDistances));
      for (const auto& d : eval_distances) distances.push_back(parse_distance(d));
      std::vector<Scenario> scenarios;
      for (const auto& s : eval_scenarios) {
        if (s == "all") scenarios.assign(std::begin(kAllScenarios), std::end(kAllScenarios));
        else scenarios.push_back(parse_scenario(s));
      }
      std::vector<EvalReport> reports;
      for (Scenario s : scenarios)
        for (auto& r : run_eval(clips, s, distances, n, dparams, threads)) {
          if (g.no_timing) r.wall_s = 0.0;
          reports.push_back(std::move(r));
        }
      json doc_reports = json::array();
      for (const auto& r : reports) doc_reports.push_back(to_json(r, !g.no_timing));
      json names = json::array();
      for (Distance d : distances) names.push_back(to_string(d));
      const json doc = {{"segmenter", segmenter},
                        {"reports", doc_reports},
                        {"run_config", stamp("evaluate", {{"embeddings", eval_embeddings},
                                                          {"checkpoint", eval_ckpt},
                                                          {"segments", eval_segments},
                                                          {"scenarios", eval_scenarios},
                                                          {"distances", names},
                                                          {"n", n},
                                                          {"nw_indel", dparams.nw_indel},
                                                          {"sw_indel", dparams.sw_indel}})}};
      if (!eval_out.empty()) detail::write_json(eval_out, doc);
      if (!eval_csv.empty()) detail::write_file(eval_csv, reports_to_csv(reports));
      emit(out, g, doc, reports_to_csv(reports));
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::invalid_argument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace segvm::cli
