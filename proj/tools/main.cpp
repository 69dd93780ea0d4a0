#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "recon/dataprep.hpp"
#include "recon/dpsr.hpp"
#include "recon/masks.hpp"
#include "recon/meshing.hpp"
#include "recon/metrics.hpp"
#include "recon/normals.hpp"
#include "recon/pointcloud_io.hpp"
#include "recon/smpn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace recon;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw invalid_input("cannot open file: " + path);
  out << text;
  if (!out.flush()) throw runtime_failure("write failed: " + path);
}

void write_manifest(const std::string& path, json j) {
  j["version"] = kVersion;
  write_text(path, j.dump(2) + "\n");
}

json load_meta(const std::string& dir) {
  std::string path = (fs::path(dir) / "meta.json").string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception&) {
    throw invalid_input("unparseable meta.json: " + path);
  }
  return j;
}

OrientedPointCloud load_oriented(const std::string& path, int knn) {
  OrientedPointCloud cloud = load_pointcloud(path);
  if (!cloud.has_normals()) cloud = estimate_normals(cloud.positions, knn);
  return cloud;
}

SolverConfig solver_from_meta(const json& meta, const std::string& dir) {
  SolverConfig sc;
  try {
    sc.res = meta.at("res").get<int>();
    sc.sigma = meta.at("sigma").get<double>();
    sc.iso_scale = meta.at("iso_scale").get<double>();
  } catch (const json::exception&) {
    throw invalid_input("meta.json missing res/sigma/iso_scale: " + dir);
  }
  return sc;
}

ScalarGrid chi_from_example(const std::string& dir, int knn, SolverConfig* out_cfg) {
  json meta = load_meta(dir);
  SolverConfig sc = solver_from_meta(meta, dir);
  OrientedPointCloud cloud = load_oriented((fs::path(dir) / "input.xyz").string(), knn);
  if (out_cfg) *out_cfg = sc;
  return dpsr_forward(cloud, sc, nullptr);
}

// -----------------------------------------------------------------------
// dataprep

struct DataprepArgs {
  std::string generate;
  std::string mesh_path;
  int subdivisions = 3;
  int res = 64;
  size_t samples = 20000;
  size_t holes = 4;
  double hole_min = 0.08;
  double hole_max = 0.15;
  std::string noise = "none";
  int mask_width = 5;
  double sigma = 2.0;
  double iso = 0.5;
  uint64_t seed = 0;
  std::string out;
};

int cmd_dataprep(const DataprepArgs& a) {
  TriangleMesh mesh;
  if (!a.generate.empty()) {
    if (a.generate == "sphere") {
      mesh = make_icosphere(a.subdivisions);
    } else if (a.generate == "torus") {
      mesh = make_torus(1.0, 0.4, 48, 24);
    } else if (a.generate == "box") {
      mesh = make_box();
    } else {
      throw invalid_input("unknown generator: " + a.generate);
    }
  } else if (!a.mesh_path.empty()) {
    mesh = load_mesh(a.mesh_path);
  } else {
    throw invalid_input("dataprep needs --generate or --mesh");
  }

  ExampleConfig ec;
  ec.res = a.res;
  ec.n_samples = a.samples;
  ec.holes.num_regions = a.holes;
  ec.holes.radius_min = a.hole_min;
  ec.holes.radius_max = a.hole_max;
  ec.mask_width = a.mask_width;
  ec.sigma = a.sigma;
  ec.iso_scale = a.iso;
  ec.seed = a.seed;
  if (a.noise == "none") {
    ec.aug = std::nullopt;
  } else if (a.noise == "low") {
    ec.aug = AugmentationSetting::low_noise();
  } else if (a.noise == "high") {
    ec.aug = AugmentationSetting::high_noise();
  } else if (a.noise == "outliers") {
    ec.aug = AugmentationSetting::outliers();
  } else {
    throw invalid_input("unknown noise kind: " + a.noise);
  }

  TrainingExample ex = make_example(mesh, ec);

  fs::create_directories(a.out);
  save_xyz((fs::path(a.out) / "input.xyz").string(), ex.input_cloud);
  save_xyz((fs::path(a.out) / "gt.xyz").string(), ex.gt_cloud);
  save_grid((fs::path(a.out) / "chi.vgrd").string(), ex.gt_chi);
  save_grid((fs::path(a.out) / "mask.vmsk").string(), ex.gt_mask);

  json meta;
  meta["command"] = "dataprep";
  meta["generator"] = a.generate;
  meta["mesh"] = a.mesh_path;
  meta["subdivisions"] = a.subdivisions;
  meta["res"] = a.res;
  meta["samples"] = a.samples;
  meta["holes"] = {{"num_regions", a.holes},
                   {"radius_min", a.hole_min},
                   {"radius_max", a.hole_max}};
  meta["noise"] = a.noise;
  meta["mask_width"] = a.mask_width;
  meta["sigma"] = a.sigma;
  meta["iso_scale"] = a.iso;
  meta["seed"] = a.seed;
  meta["files"] = {{"input", "input.xyz"},
                   {"gt", "gt.xyz"},
                   {"chi", "chi.vgrd"},
                   {"mask", "mask.vmsk"}};
  meta["mask_voxels"] = ex.gt_mask.count();
  write_manifest((fs::path(a.out) / "meta.json").string(), meta);
  return 0;
}

// -----------------------------------------------------------------------
// reconstruct

struct ReconstructArgs {
  std::string cloud_path;
  int res = 128;
  double sigma = 2.0;
  double iso = 0.5;
  std::string mask = "none";
  std::string gt_mask;
  double threshold = -1.0;
  int mask_width = 7;
  std::string weights;
  int knn = 20;
  std::string cell_rule = "all";
  std::string out;
};

CellRule parse_cell_rule(const std::string& s) {
  if (s == "all") return CellRule::all;
  if (s == "any") return CellRule::any;
  throw invalid_input("unknown cell rule: " + s);
}

int cmd_reconstruct(const ReconstructArgs& a) {
  OrientedPointCloud cloud = load_oriented(a.cloud_path, a.knn);
  SolverConfig sc;
  sc.res = a.res;
  sc.sigma = a.sigma;
  sc.iso_scale = a.iso;
  ScalarGrid chi = dpsr_forward(cloud, sc, nullptr);

  CellRule rule = parse_cell_rule(a.cell_rule);
  TriangleMesh mesh;
  std::optional<SurfaceMask> mask;
  double threshold_used = a.threshold;
  if (a.mask == "none") {
    mesh = marching_cubes(chi, 0.0);
  } else if (a.mask == "gt") {
    if (a.gt_mask.empty()) throw invalid_input("--mask gt needs --gt-mask");
    mask = load_surface_mask(a.gt_mask);
    if (mask->res != chi.res) throw invalid_input("gt mask resolution does not match --res");
  } else if (a.mask == "lap2d" || a.mask == "lap3d") {
    LaplacianBaselineConfig lc;
    lc.mode = a.mask == "lap2d" ? LaplacianMode::two_d : LaplacianMode::three_d;
    lc.threshold = threshold_used = a.threshold < 0.0 ? 0.05 : a.threshold;
    lc.dilation_width = a.mask_width;
    mask = a.mask == "lap2d" ? laplacian2d_mask(chi, lc) : laplacian3d_mask(chi, lc);
  } else if (a.mask == "smpn") {
    if (a.weights.empty()) throw invalid_input("--mask smpn needs --weights");
    UNetParams params = load_params(a.weights);
    threshold_used = a.threshold < 0.0 ? 0.5 : a.threshold;
    mask = predict_mask(chi, params, threshold_used);
  } else {
    throw invalid_input("unknown mask mode: " + a.mask);
  }
  if (mask) mesh = masked_marching_cubes(chi, *mask, 0.0, rule);

  save_mesh_obj(a.out, mesh);
  WatertightReport wt = watertight_check(mesh);

  json j;
  j["command"] = "reconstruct";
  j["input"] = a.cloud_path;
  j["res"] = a.res;
  j["sigma"] = a.sigma;
  j["iso_scale"] = a.iso;
  j["mask"] = a.mask;
  j["gt_mask"] = a.gt_mask;
  j["threshold"] = threshold_used < 0.0 ? json() : json(threshold_used);
  j["mask_width"] = a.mask_width;
  j["weights"] = a.weights;
  j["knn"] = a.knn;
  j["cell_rule"] = a.cell_rule;
  j["output"] = a.out;
  j["result"] = {{"vertices", mesh.vertices.size()},
                 {"triangles", mesh.triangles.size()},
                 {"boundary_edges", wt.boundary_edge_count},
                 {"watertight", wt.is_watertight},
                 {"mask_voxels", mask ? static_cast<int64_t>(mask->count()) : int64_t{-1}}};
  write_manifest(a.out + ".run.json", j);
  return 0;
}

// -----------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::vector<std::string> dirs;
  std::vector<std::string> modes{"lap2d", "lap3d"};
  std::vector<double> thresholds{0.00, 0.05, 0.10, 0.20, 0.40};
  int mask_width = 7;
  size_t samples = 10000;
  uint64_t seed = 0;
  int knn = 20;
  std::string cell_rule = "all";
  std::string out;
};

struct SweepRow {
  std::string example, mode;
  double threshold, cd, hd;
  size_t boundary_edges, raw_voxels, mask_voxels;
};

SweepRow measure_mesh(const TriangleMesh& mesh, const std::vector<Vec3>& gt, size_t samples,
                      uint64_t seed) {
  SweepRow row{};
  if (mesh.empty()) {
    row.cd = row.hd = std::numeric_limits<double>::infinity();
    row.boundary_edges = 0;
    return row;
  }
  OrientedPointCloud pts = sample_mesh_surface(mesh, samples, seed);
  row.cd = chamfer(pts.positions, gt);
  row.hd = hausdorff(pts.positions, gt);
  row.boundary_edges = watertight_check(mesh).boundary_edge_count;
  return row;
}

int cmd_sweep(const SweepArgs& a) {
  CellRule rule = parse_cell_rule(a.cell_rule);
  for (const std::string& mode : a.modes)
    if (mode != "lap2d" && mode != "lap3d") throw invalid_input("unknown sweep mode: " + mode);

  std::ostringstream csv;
  csv << "example,mode,threshold,chamfer,hausdorff,boundary_edges,raw_mask_voxels,mask_voxels\n";
  for (const std::string& dir : a.dirs) {
    ScalarGrid chi = chi_from_example(dir, a.knn, nullptr);
    std::vector<Vec3> gt = load_xyz((fs::path(dir) / "gt.xyz").string()).positions;
    size_t voxels = chi.size();

    TriangleMesh unmasked = marching_cubes(chi, 0.0);
    SweepRow base = measure_mesh(unmasked, gt, a.samples, a.seed);
    csv << dir << ",none,0," << fmt_double(base.cd) << "," << fmt_double(base.hd) << ","
        << base.boundary_edges << "," << voxels << "," << voxels << "\n";

    for (const std::string& mode : a.modes)
      for (double thr : a.thresholds) {
        LaplacianBaselineConfig raw_cfg;
        raw_cfg.mode = mode == "lap2d" ? LaplacianMode::two_d : LaplacianMode::three_d;
        raw_cfg.threshold = thr;
        raw_cfg.dilation_width = 1;
        SurfaceMask raw = mode == "lap2d" ? laplacian2d_mask(chi, raw_cfg)
                                          : laplacian3d_mask(chi, raw_cfg);
        SurfaceMask mask = dilate(raw, a.mask_width);
        TriangleMesh mesh = masked_marching_cubes(chi, mask, 0.0, rule);
        SweepRow row = measure_mesh(mesh, gt, a.samples, a.seed);
        csv << dir << "," << mode << "," << fmt_double(thr) << "," << fmt_double(row.cd) << ","
            << fmt_double(row.hd) << "," << row.boundary_edges << "," << raw.count() << ","
            << mask.count() << "\n";
      }
  }
  write_text(a.out, csv.str());

  json j;
  j["command"] = "sweep";
  j["examples"] = a.dirs;
  j["modes"] = a.modes;
  j["thresholds"] = a.thresholds;
  j["mask_width"] = a.mask_width;
  j["samples"] = a.samples;
  j["seed"] = a.seed;
  j["knn"] = a.knn;
  j["cell_rule"] = a.cell_rule;
  j["output"] = a.out;
  write_manifest(a.out + ".run.json", j);
  return 0;
}

// -----------------------------------------------------------------------
// train

struct TrainArgs {
  std::vector<std::string> dirs;
  std::vector<int> channels{4, 8, 16};
  double lr = 5e-4;
  int batch = 2;
  int steps = 500;
  uint64_t seed = 0;
  int knn = 20;
  std::string loss_csv;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  std::vector<MaskExample> dataset;
  int res = 0;
  for (const std::string& dir : a.dirs) {
    MaskExample ex;
    SolverConfig sc;
    ex.chi = chi_from_example(dir, a.knn, &sc);
    ex.mask = load_surface_mask((fs::path(dir) / "mask.vmsk").string());
    res = sc.res;
    dataset.push_back(std::move(ex));
  }

  UNetConfig cfg;
  cfg.channels = a.channels;
  cfg.res = res;
  UNetParams params = init_unet(cfg, derive_seed(a.seed, "init"));

  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.max_steps = a.steps;
  tc.seed = derive_seed(a.seed, "train");
  std::vector<double> curve = train_smpn(dataset, tc, params);

  save_params(params, a.out);
  std::string loss_path =
      a.loss_csv.empty() ? fs::path(a.out).replace_extension("loss.csv").string() : a.loss_csv;
  std::ostringstream csv;
  csv << "step,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) csv << (i + 1) << "," << fmt_double(curve[i]) << "\n";
  write_text(loss_path, csv.str());

  json j;
  j["command"] = "train";
  j["examples"] = a.dirs;
  j["channels"] = a.channels;
  j["lr"] = a.lr;
  j["batch"] = a.batch;
  j["steps"] = a.steps;
  j["seed"] = a.seed;
  j["knn"] = a.knn;
  j["res"] = res;
  j["output"] = a.out;
  j["loss_csv"] = loss_path;
  j["final_loss"] = curve.empty() ? 0.0 : curve.back();
  write_manifest(a.out + ".run.json", j);
  return 0;
}

// -----------------------------------------------------------------------
// metrics

struct MetricsArgs {
  std::string pred_path, gt_path;
  size_t samples = 10000;
  uint64_t seed = 0;
  std::string out;
};

int cmd_metrics(const MetricsArgs& a) {
  TriangleMesh pred = load_mesh(a.pred_path);
  TriangleMesh gt = load_mesh(a.gt_path);
  MetricReport report = evaluate_meshes(pred, gt, a.samples, a.seed);
  std::string body = metric_report_json(report);
  std::fputs(body.c_str(), stdout);
  std::fputc('\n', stdout);
  if (!a.out.empty()) {
    write_text(a.out, body + "\n");
    json j;
    j["command"] = "metrics";
    j["pred"] = a.pred_path;
    j["gt"] = a.gt_path;
    j["samples"] = a.samples;
    j["seed"] = a.seed;
    j["output"] = a.out;
    write_manifest(a.out + ".run.json", j);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surface reconstruction from unoriented point clouds"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);

  DataprepArgs dp;
  CLI::App* dataprep = app.add_subcommand("dataprep", "generate a training/eval example");
  dataprep->add_option("--generate", dp.generate, "analytic shape: sphere, torus, box");
  dataprep->add_option("--mesh", dp.mesh_path, "mesh file (obj/off)")->excludes("--generate");
  dataprep->add_option("--subdivisions", dp.subdivisions, "icosphere subdivisions")
      ->check(CLI::Range(0, 7));
  dataprep->add_option("--res", dp.res, "grid resolution");
  dataprep->add_option("--samples", dp.samples, "surface sample count");
  dataprep->add_option("--holes", dp.holes, "number of punched regions");
  dataprep->add_option("--hole-min", dp.hole_min, "min hole radius");
  dataprep->add_option("--hole-max", dp.hole_max, "max hole radius");
  dataprep->add_option("--noise", dp.noise, "none, low, high, outliers");
  dataprep->add_option("--mask-width", dp.mask_width, "gt mask dilation width");
  dataprep->add_option("--sigma", dp.sigma, "gaussian bandwidth");
  dataprep->add_option("--iso", dp.iso, "indicator normalization scale");
  dataprep->add_option("--seed", dp.seed, "master seed");
  dataprep->add_option("-o,--out", dp.out, "output directory")->required();

  ReconstructArgs rc;
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "point cloud to triangle mesh");
  reconstruct->add_option("cloud", rc.cloud_path, "input point cloud (xyz/ply)")->required();
  reconstruct->add_option("--res", rc.res, "grid resolution");
  reconstruct->add_option("--sigma", rc.sigma, "gaussian bandwidth");
  reconstruct->add_option("--iso", rc.iso, "indicator normalization scale");
  reconstruct->add_option("--mask", rc.mask, "none, gt, lap2d, lap3d, smpn");
  reconstruct->add_option("--gt-mask", rc.gt_mask, "mask file for --mask gt");
  reconstruct->add_option("--threshold", rc.threshold,
                          "laplacian threshold (default 0.05) or smpn binarization (default 0.5)");
  reconstruct->add_option("--mask-width", rc.mask_width, "laplacian dilation width");
  reconstruct->add_option("--weights", rc.weights, "weights manifest for --mask smpn");
  reconstruct->add_option("--knn", rc.knn, "neighbors for normal estimation");
  reconstruct->add_option("--cell-rule", rc.cell_rule, "masked cell rule: all or any");
  reconstruct->add_option("-o,--out", rc.out, "output mesh (obj)")->required();

  SweepArgs sw;
  CLI::App* sweep = app.add_subcommand("sweep", "baseline threshold sweep over examples");
  sweep->add_option("dirs", sw.dirs, "example directories");
  sweep->add_option("--modes", sw.modes, "mask modes: lap2d, lap3d")->delimiter(',');
  sweep->add_option("--thresholds", sw.thresholds, "laplacian thresholds")->delimiter(',');
  sweep->add_option("--mask-width", sw.mask_width, "laplacian dilation width");
  sweep->add_option("--samples", sw.samples, "mesh sample count for metrics");
  sweep->add_option("--seed", sw.seed, "sampling seed");
  sweep->add_option("--knn", sw.knn, "neighbors for normal estimation");
  sweep->add_option("--cell-rule", sw.cell_rule, "masked cell rule: all or any");
  sweep->add_option("-o,--out", sw.out, "output csv")->required();

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train the surface mask network");
  train->add_option("dirs", tr.dirs, "example directories")->required();
  train->add_option("--channels", tr.channels, "unet feature widths")->delimiter(',');
  train->add_option("--lr", tr.lr, "learning rate");
  train->add_option("--batch", tr.batch, "batch size");
  train->add_option("--steps", tr.steps, "training steps");
  train->add_option("--seed", tr.seed, "master seed");
  train->add_option("--knn", tr.knn, "neighbors for normal estimation");
  train->add_option("--loss-csv", tr.loss_csv, "loss curve path");
  train->add_option("-o,--out", tr.out, "weights manifest path")->required();

  MetricsArgs mt;
  CLI::App* metrics = app.add_subcommand("metrics", "compare two meshes");
  metrics->add_option("pred", mt.pred_path, "predicted mesh")->required();
  metrics->add_option("gt", mt.gt_path, "ground truth mesh")->required();
  metrics->add_option("--samples", mt.samples, "surface sample count");
  metrics->add_option("--seed", mt.seed, "sampling seed");
  metrics->add_option("-o,--out", mt.out, "report path (stdout otherwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*dataprep) return cmd_dataprep(dp);
    if (*reconstruct) return cmd_reconstruct(rc);
    if (*sweep) return cmd_sweep(sw);
    if (*train) return cmd_train(tr);
    if (*metrics) return cmd_metrics(mt);
  } catch (const invalid_input& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const runtime_failure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
