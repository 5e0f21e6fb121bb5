// Command-line front end for the strip-adjustment pipeline:
//   generate | preprocess | estimate | export | stats
// Exit codes: 0 success, 1 usage, 2 input error, 3 numerical failure, 4 I/O.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lsa/chain_solver.hpp"
#include "lsa/diagnostics.hpp"
#include "lsa/pipeline.hpp"
#include "lsa/strip.hpp"
#include "lsa/synth.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  int workers = 0;  // 0: from config
  std::string scratch;
  bool verbose = false;
};

lsa::PipelineConfig load_config(const CommonOpts& opts) {
  lsa::PipelineConfig cfg;
  if (!opts.config_path.empty()) cfg = lsa::PipelineConfig::from_json_file(opts.config_path);
  if (opts.workers > 0) cfg.engine.workers = opts.workers;
  return cfg;
}

void vlog(const CommonOpts& opts, const std::string& msg) {
  if (opts.verbose) std::cerr << "[lsa] " << msg << "\n";
}

std::vector<fs::path> list_strip_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".strip") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .strip files under " + dir.string());
  return files;
}

int cmd_generate(const CommonOpts& common, const std::string& out_dir,
                 std::optional<uint64_t> seed, std::optional<double> length) {
  lsa::PipelineConfig cfg = load_config(common);
  lsa::StandardScene scene = lsa::standard_scene(length.value_or(cfg.gen.street_length));
  scene.scanner = cfg.gen.scanner;
  scene.error = cfg.gen.error;
  if (seed) scene.error.seed = *seed;
  vlog(common, "generating standard scene into " + out_dir);
  lsa::GeneratedData data =
      lsa::generate(scene.scene, scene.trajectories, scene.scanner, scene.error, out_dir);
  std::printf("generated %zu strips, %zu points, truth for %zu trajectories\n",
              data.strip_files.size(), data.total_points, data.truth_files.size());
  return 0;
}

int cmd_preprocess(const CommonOpts& common, const std::string& strips_dir,
                   const std::string& tiles_dir, std::optional<double> tile_size) {
  lsa::PipelineConfig cfg = load_config(common);
  if (tile_size) cfg.tile_size = *tile_size;
  fs::path scratch = common.scratch.empty() ? fs::path(tiles_dir) / "scratch" : fs::path(common.scratch);
  auto strips = list_strip_files(strips_dir);
  vlog(common, "preprocessing " + std::to_string(strips.size()) + " strips");
  lsa::TilesManifest manifest =
      lsa::preprocess_job(cfg, strips, tiles_dir, scratch, cfg.engine.workers);
  std::printf("wrote %zu tiles, %llu unique points (%llu records with overlap)\n",
              manifest.tiles.size(), (unsigned long long)manifest.unique_points,
              (unsigned long long)manifest.total_records);
  return 0;
}

int cmd_estimate(const CommonOpts& common, const std::string& tiles_dir, const std::string& run_dir,
                 std::optional<int> iterations_override) {
  lsa::PipelineConfig cfg = load_config(common);
  if (iterations_override) {
    if (*iterations_override < 0 || size_t(*iterations_override) > cfg.plan.steps.size())
      throw CLI::ValidationError("--iterations-override outside the configured plan");
    cfg.plan.steps.resize(size_t(*iterations_override));
  }
  lsa::TilesManifest manifest = lsa::TilesManifest::load(fs::path(tiles_dir) / "tiles_manifest.json");
  manifest.dir = tiles_dir;
  vlog(common, "running " + std::to_string(cfg.plan.steps.size()) + " iterations");
  lsa::ScheduleResult result = lsa::run_schedule(cfg, manifest, run_dir, cfg.engine.workers);
  for (const auto& s : result.stats)
    std::printf("iteration %2u  threshold %.3f  pitch %.2f  points %llu  std %.4f mm\n", s.iteration,
                s.threshold, s.lsm_pitch, (unsigned long long)s.correspondences,
                1000.0 * s.distance_std());
  std::printf("corrections written to %s\n", (fs::path(run_dir) / "corrections.bin").c_str());
  return 0;
}

int cmd_export(const CommonOpts& common, const std::string& tiles_dir,
               const std::string& corrections_path, const std::string& out_path,
               bool color_by_segment) {
  lsa::PipelineConfig cfg = load_config(common);
  (void)cfg;
  lsa::TilesManifest manifest = lsa::TilesManifest::load(fs::path(tiles_dir) / "tiles_manifest.json");
  manifest.dir = tiles_dir;
  std::optional<lsa::CorrectionsSet> corrections;
  if (!corrections_path.empty()) corrections = lsa::CorrectionsSet::read(corrections_path);

  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<uint8_t, 3>> colors;
  for (const auto& tile : manifest.tiles) {
    auto records = lsa::read_tile(manifest.dir / tile.file);
    for (const auto& rec : records) {
      // Border duplicates appear in several tiles; keep the core copy only.
      if (lsa::tile_of(rec.xyz.x(), rec.xyz.y(), manifest.tile_size) != tile.key) continue;
      Eigen::Vector3d p = rec.xyz;
      if (corrections) {
        const lsa::AnchorChain& chain = corrections->chains.at(rec.trajectory_id);
        if (!chain.contains(rec.arc)) continue;
        lsa::ChainInterp interp = lsa::interpolate_correction(chain, rec.arc);
        p = lsa::apply_correction(interp.corr, lsa::ray_of(rec));
      }
      points.push_back(p);
      if (color_by_segment) {
        uint64_t h = lsa::fnv1a64(&rec.segment_id, sizeof rec.segment_id,
                                  lsa::fnv1a64(&rec.strip_id, sizeof rec.strip_id));
        colors.push_back({uint8_t(64 + h % 192), uint8_t(64 + (h >> 8) % 192),
                          uint8_t(64 + (h >> 16) % 192)});
      }
    }
  }
  lsa::write_ply(out_path, points, color_by_segment ? &colors : nullptr);
  std::printf("wrote %zu points to %s\n", points.size(), out_path.c_str());
  return 0;
}

int cmd_stats(const CommonOpts& common, const std::string& run_dir, const std::string& truth_dir,
              const std::string& out_dir, double scale_max, double resolution) {
  vlog(common, "collecting statistics from " + run_dir);
  fs::create_directories(out_dir);

  fs::path stats_dir = fs::path(run_dir) / "stats";
  std::vector<fs::path> iter_stats;
  for (const auto& entry : fs::directory_iterator(stats_dir))
    if (entry.path().extension() == ".json") iter_stats.push_back(entry.path());
  std::sort(iter_stats.begin(), iter_stats.end());
  if (iter_stats.empty()) throw std::runtime_error("no iteration stats under " + stats_dir.string());
  lsa::IterationStats last = lsa::IterationStats::from_json(lsa::read_file(iter_stats.back()));
  {
    lsa::Histogram h;
    h.bin_width = lsa::kHistogramBucket;
    h.bins = last.histogram;
    h.count = last.correspondences;
    h.sum = last.distance_sum;
    h.sq_sum = last.distance_sq_sum;
    lsa::write_file_atomic(fs::path(out_dir) / "histogram.csv", h.to_csv());
  }

  fs::path dump_path = fs::path(run_dir) / "map_dump.csv";
  if (fs::exists(dump_path)) {
    lsa::StdMapImage img = lsa::render_std_map(lsa::read_file(dump_path), scale_max, resolution);
    if (img.width > 0) lsa::write_ppm(img, fs::path(out_dir) / "std_map.ppm");
  }

  if (!truth_dir.empty()) {
    lsa::CorrectionsSet corrections = lsa::CorrectionsSet::read(fs::path(run_dir) / "corrections.bin");
    std::map<uint32_t, lsa::TruthTrack> truth;
    for (const auto& entry : fs::directory_iterator(fs::path(truth_dir) / "truth")) {
      unsigned traj = 0;
      if (std::sscanf(entry.path().filename().string().c_str(), "truth_traj_%u.csv", &traj) == 1)
        truth[traj] = lsa::read_truth_csv(entry.path());
    }
    auto trajectories =
        lsa::trajectories_from_json(lsa::read_file(fs::path(truth_dir) / "trajectories.json"));
    lsa::TruthComparison cmp = lsa::compare_with_truth(corrections, truth, trajectories);
    lsa::write_file_atomic(fs::path(out_dir) / "truth_report.json", cmp.to_json());
    lsa::write_file_atomic(fs::path(out_dir) / "truth_report.txt", cmp.to_text());
    std::fputs(cmp.to_text().c_str(), stdout);
  }
  std::printf("final std %.4f mm over %llu correspondences\n", 1000.0 * last.distance_std(),
              (unsigned long long)last.correspondences);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR strip adjustment: latent-map alternating least squares over MapReduce tiles"};
  app.require_subcommand(1);

  CommonOpts common;
  app.add_option("--config", common.config_path, "pipeline configuration JSON");
  app.add_option("--workers", common.workers, "worker threads (overrides config)");
  app.add_option("--scratch", common.scratch, "scratch directory for shuffle files");
  app.add_flag("--verbose", common.verbose, "progress logging to stderr");

  auto* gen = app.add_subcommand("generate", "synthesize the standard scene: strips + truth");
  std::string gen_out;
  std::optional<uint64_t> gen_seed;
  std::optional<double> gen_length;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed override");
  gen->add_option("--length", gen_length, "street length in meters");

  auto* pre = app.add_subcommand("preprocess", "segment strips and build spatial tiles");
  std::string pre_strips, pre_tiles;
  std::optional<double> pre_tile_size;
  pre->add_option("--strips", pre_strips, "directory with .strip files")->required();
  pre->add_option("--tiles", pre_tiles, "output tile directory")->required();
  pre->add_option("--tile-size", pre_tile_size, "tile size in meters (overrides config)");

  auto* est = app.add_subcommand("estimate", "run the alternating least-squares iterations");
  std::string est_tiles, est_run;
  std::optional<int> est_iters;
  est->add_option("--tiles", est_tiles, "tile directory from preprocess")->required();
  est->add_option("--run", est_run, "output run directory")->required();
  est->add_option("--iterations-override", est_iters, "run only the first N plan steps");

  auto* exp = app.add_subcommand("export", "write the (corrected) point cloud as binary PLY");
  std::string exp_tiles, exp_corr, exp_out;
  bool exp_color = false;
  exp->add_option("--tiles", exp_tiles, "tile directory")->required();
  exp->add_option("--corrections", exp_corr, "corrections file (omit for raw export)");
  exp->add_option("--out", exp_out, "output .ply path")->required();
  exp->add_flag("--color-by-segment", exp_color, "color points by segment id");

  auto* sta = app.add_subcommand("stats", "histograms, std-dev map render, truth comparison");
  std::string sta_run, sta_truth, sta_out = "stats_out";
  double sta_scale = 0.007, sta_res = 0.05;
  sta->add_option("--run", sta_run, "run directory from estimate")->required();
  sta->add_option("--truth", sta_truth, "generator output directory with truth/ sidecars");
  sta->add_option("--out", sta_out, "report output directory");
  sta->add_option("--scale-max", sta_scale, "std-map color scale maximum (meters)");
  sta->add_option("--resolution", sta_res, "std-map pixel size (meters)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(common, gen_out, gen_seed, gen_length);
    if (pre->parsed()) return cmd_preprocess(common, pre_strips, pre_tiles, pre_tile_size);
    if (est->parsed()) return cmd_estimate(common, est_tiles, est_run, est_iters);
    if (exp->parsed()) return cmd_export(common, exp_tiles, exp_corr, exp_out, exp_color);
    if (sta->parsed()) return cmd_stats(common, sta_run, sta_truth, sta_out, sta_scale, sta_res);
  } catch (const lsa::SingularChainError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const lsa::mr::JobError& e) {
    const std::string what = e.what();
    std::fprintf(stderr, "job failed: %s\n", what.c_str());
    return what.find("singular chain") != std::string::npos ? 3 : 4;
  } catch (const lsa::StripParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const lsa::TruncatedError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 1;
}
