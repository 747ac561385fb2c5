#include "maskfuse/cli.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "maskfuse/errors.h"
#include "maskfuse/evaluation.h"
#include "maskfuse/fusion.h"
#include "maskfuse/gbm.h"
#include "maskfuse/numeric_text.h"
#include "maskfuse/parallel.h"
#include "maskfuse/png_io.h"
#include "maskfuse/post_process.h"
#include "maskfuse/region_features.h"
#include "maskfuse/rle.h"
#include "maskfuse/synth.h"
#include "maskfuse/target_gen.h"

namespace maskfuse {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using ImageSet = std::map<std::string, LabelMap>;

// Options shared by most subcommands.
struct Common {
  int threads = 0;  // 0: fall back to MASKFUSE_THREADS, then 1
  std::string format = "png16";
  int height = 256;  // RLE inputs only
  int width = 256;

  int thread_count() const {
    return ResolveThreadCount(threads > 0 ? std::optional<int>(threads) : std::nullopt);
  }
  MaskFormat mask_format() const { return format == "rle" ? MaskFormat::kRle : MaskFormat::kPng16; }
};

void AddCommon(CLI::App* sub, Common* c, bool with_format = true) {
  sub->add_option("--threads", c->threads, "worker threads (default: $MASKFUSE_THREADS or 1)")
      ->check(CLI::NonNegativeNumber);
  if (with_format) {
    sub->add_option("--format", c->format, "mask file format")
        ->check(CLI::IsMember({"png16", "rle"}))
        ->capture_default_str();
    sub->add_option("--height", c->height, "image height for RLE inputs")->capture_default_str();
    sub->add_option("--width", c->width, "image width for RLE inputs")->capture_default_str();
  }
}

std::string Hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// FNV-1a over the file bytes, or over (relative path, bytes) of every file in
// a directory in sorted order.
std::string Digest(const fs::path& path) {
  std::error_code ec;
  if (fs::is_regular_file(path, ec)) return "fnv1a:" + Hex(StableHash(ReadFile(path)));
  if (!fs::is_directory(path, ec)) return "missing";
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const fs::path& f : files) {
    acc += fs::relative(f, path).generic_string();
    acc.push_back('\0');
    acc += Hex(StableHash(ReadFile(f)));
    acc.push_back('\n');
  }
  return "fnv1a:" + Hex(StableHash(acc));
}

void EnsureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Every option of the subcommand with its effective value.
nlohmann::json EchoConfig(const CLI::App& sub) {
  nlohmann::json config = nlohmann::json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help" || name == "-h") continue;
    if (opt->count() > 0) {
      const std::vector<std::string>& r = opt->results();
      if (r.size() == 1) {
        config[name] = r.front();
      } else {
        config[name] = r;
      }
    } else {
      config[name] = opt->get_default_str();
    }
  }
  return config;
}

void WriteRunManifest(const fs::path& out_dir, const CLI::App& sub,
                      const std::vector<std::pair<std::string, fs::path>>& inputs,
                      Clock::time_point start) {
  nlohmann::json m;
  m["command"] = sub.get_name();
  m["version"] = kToolVersion;
  m["config"] = EchoConfig(sub);
  nlohmann::json digests = nlohmann::json::object();
  for (const auto& [name, path] : inputs) digests[name] = Digest(path);
  m["input_digests"] = digests;
  m["wall_time_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  WriteText(out_dir / "run_manifest.json", m.dump(2) + "\n");
}

void AddImage(ImageSet* set, const std::string& id, LabelMap map, const fs::path& origin) {
  if (!set->emplace(id, std::move(map)).second) {
    throw FormatError(origin.string() + ": image id '" + id + "' appears twice");
  }
}

void LoadRleFile(const fs::path& path, const Common& c, ImageSet* set) {
  for (RleImage& img : ReadRleCsv(path, c.height, c.width)) {
    AddImage(set, img.image_id,
             LabelMapFromInstances(img.instances, c.height, c.width, OverlapPolicy::kError), path);
  }
}

bool HasChannelSuffix(const fs::path& p) {
  const std::string stem = p.stem().string();
  return stem.ends_with("_nuclei") || stem.ends_with("_borders");
}

// A directory of <id>.png / <id>.csv files, or a single file.
ImageSet LoadImages(const fs::path& src, const Common& c) {
  ImageSet set;
  std::error_code ec;
  if (fs::is_regular_file(src, ec)) {
    if (src.extension() == ".csv") {
      LoadRleFile(src, c, &set);
    } else {
      AddImage(&set, src.stem().string(), ReadLabelMapPng(src), src);
    }
    return set;
  }
  if (!fs::is_directory(src, ec)) throw IoError("no such file or directory: " + src.string());
  const std::string ext = c.mask_format() == MaskFormat::kRle ? ".csv" : ".png";
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(src)) {
    if (entry.is_regular_file() && entry.path().extension() == ext &&
        !HasChannelSuffix(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    if (ext == ".csv") {
      LoadRleFile(f, c, &set);
    } else {
      AddImage(&set, f.stem().string(), ReadLabelMapPng(f), f);
    }
  }
  return set;
}

void SaveImage(const fs::path& dir, const std::string& id, const LabelMap& map, MaskFormat fmt) {
  if (fmt == MaskFormat::kPng16) {
    WriteLabelMapPng(dir / (id + ".png"), map);
  } else {
    const RleImage img{id, map.height(), map.width(), InstancesFromLabelMap(map)};
    WriteRleCsv(dir / (id + ".csv"), std::span(&img, 1));
  }
}

const LabelMap& Lookup(const ImageSet& set, const std::string& id, const std::string& what) {
  const auto it = set.find(id);
  if (it == set.end()) throw FormatError(what + " has no image '" + id + "'");
  return it->second;
}

void CheckSameSize(const LabelMap& a, const LabelMap& b, const std::string& what,
                   const std::string& id) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionMismatch(what + " image '" + id + "' is " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + " but the reference is " +
                            std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

void CheckSameIds(const ImageSet& pred, const ImageSet& ref, const std::string& what) {
  for (const auto& [id, map] : pred) {
    if (!ref.contains(id)) throw FormatError(what + " image '" + id + "' has no ground truth");
  }
}

ErrorProfile ProfileByName(const std::string& name) {
  if (name == "clumper") return ErrorProfile::Clumper();
  if (name == "splitter") return ErrorProfile::Splitter();
  if (name == "identity") return ErrorProfile::Identity();
  throw ConfigError("unknown error profile '" + name + "'");
}

// `NAME=PATH`, or a bare path named after its last component.
std::pair<std::string, fs::path> ParseNamedPath(const std::string& arg) {
  const size_t eq = arg.find('=');
  if (eq != std::string::npos) return {arg.substr(0, eq), fs::path(arg.substr(eq + 1))};
  fs::path p(arg);
  std::string name = p.filename().string();
  if (name.empty()) name = p.parent_path().filename().string();
  return {name, p};
}

struct NamedPreds {
  std::string name;
  fs::path path;
  std::vector<ImagePair> pairs;
};

std::vector<NamedPreds> LoadEvaluationInputs(const fs::path& gt_src,
                                             const std::vector<std::string>& pred_args,
                                             const Common& c) {
  const ImageSet gt = LoadImages(gt_src, c);
  std::vector<NamedPreds> out;
  for (const std::string& arg : pred_args) {
    auto [name, path] = ParseNamedPath(arg);
    const ImageSet preds = LoadImages(path, c);
    const std::string what = "prediction set " + name + " (" + path.string() + ")";
    CheckSameIds(preds, gt, what);
    NamedPreds np{name, path, {}};
    for (const auto& [id, g] : gt) {
      const LabelMap& p = Lookup(preds, id, what);
      CheckSameSize(p, g, what, id);
      np.pairs.push_back({id, g.height(), g.width(), InstancesFromLabelMap(p),
                          InstancesFromLabelMap(g)});
    }
    out.push_back(std::move(np));
  }
  return out;
}

// Candidate inputs given either as a corpus directory or as explicit sets.
struct CandidateInputs {
  fs::path corpus;
  fs::path gt;
  fs::path a;
  fs::path b;
};

void AddCandidateOptions(CLI::App* sub, CandidateInputs* in, bool with_gt) {
  sub->add_option("--corpus", in->corpus, "corpus directory with manifest.csv");
  if (with_gt) sub->add_option("--gt", in->gt, "ground-truth label maps");
  sub->add_option("--a", in->a, "source A label maps");
  sub->add_option("--b", in->b, "source B label maps");
}

struct LoadedCandidates {
  ImageSet gt;
  ImageSet a;
  ImageSet b;
  std::vector<std::pair<std::string, fs::path>> inputs;
};

LoadedCandidates LoadCandidates(const CandidateInputs& in, const Common& c, bool need_gt) {
  LoadedCandidates out;
  if (!in.corpus.empty()) {
    const std::vector<CorpusEntry> entries = ReadManifest(in.corpus / "manifest.csv");
    out.inputs.emplace_back("--corpus", in.corpus);
    auto load = [&](const std::string& rel, const std::string& id, ImageSet* set) {
      const fs::path p = in.corpus / rel;
      ImageSet one = LoadImages(p, c);
      if (one.size() != 1) throw FormatError(p.string() + ": expected exactly one image");
      AddImage(set, id, std::move(one.begin()->second), p);
    };
    for (const CorpusEntry& e : entries) {
      if (need_gt) load(e.gt_path, e.image_id, &out.gt);
      load(e.path_a, e.image_id, &out.a);
      load(e.path_b, e.image_id, &out.b);
    }
  } else {
    if (in.a.empty() || in.b.empty() || (need_gt && in.gt.empty())) {
      throw ConfigError(need_gt ? "give --corpus or all of --gt, --a, --b"
                                : "give --corpus or both --a and --b");
    }
    if (need_gt) {
      out.gt = LoadImages(in.gt, c);
      out.inputs.emplace_back("--gt", in.gt);
    }
    out.a = LoadImages(in.a, c);
    out.b = LoadImages(in.b, c);
    out.inputs.emplace_back("--a", in.a);
    out.inputs.emplace_back("--b", in.b);
  }
  const ImageSet& ref = need_gt ? out.gt : out.a;
  CheckSameIds(out.a, ref, "source A");
  CheckSameIds(out.b, ref, "source B");
  for (const auto& [id, map] : ref) {
    CheckSameSize(Lookup(out.a, id, "source A"), map, "source A", id);
    CheckSameSize(Lookup(out.b, id, "source B"), map, "source B", id);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Command {
  CLI::App* app = nullptr;
  std::function<void(std::ostream&)> run;
};

Command AddSynth(CLI::App& root, Common* c) {
  struct Opts {
    size_t images = 0;
    uint64_t seed = 42;
    std::string out;
    SceneConfig scene;
    std::string profile_a = "clumper";
    std::string profile_b = "splitter";
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("synth", "generate a synthetic corpus");
  sub->add_option("--images", o->images, "number of images")->required();
  sub->add_option("--seed", o->seed, "master seed")->capture_default_str();
  sub->add_option("--out", o->out, "output directory")->required();
  sub->add_option("--scene-height", o->scene.height)->capture_default_str();
  sub->add_option("--scene-width", o->scene.width)->capture_default_str();
  sub->add_option("--min-nuclei", o->scene.min_nuclei)->capture_default_str();
  sub->add_option("--max-nuclei", o->scene.max_nuclei)->capture_default_str();
  sub->add_option("--min-axis", o->scene.min_semi_axis, "smallest semi-axis (px)")
      ->capture_default_str();
  sub->add_option("--max-axis", o->scene.max_semi_axis, "largest semi-axis (px)")
      ->capture_default_str();
  sub->add_option("--cluster-prob", o->scene.cluster_probability)->capture_default_str();
  sub->add_option("--profile-a", o->profile_a, "identity, clumper or splitter")
      ->capture_default_str();
  sub->add_option("--profile-b", o->profile_b)->capture_default_str();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            if (o->images < 1) throw ConfigError("--images must be >= 1");
            SceneConfig scene = o->scene;
            scene.seed = o->seed;
            const fs::path out(o->out);
            const std::vector<CorpusEntry> entries =
                MakeCorpus(o->images, scene, ProfileByName(o->profile_a),
                           ProfileByName(o->profile_b), out, c->mask_format(), c->thread_count());
            WriteRunManifest(out, *sub, {}, start);
            log << "wrote " << entries.size() << " images to " << out.string() << "\n";
          }};
}

Command AddMakeTargets(CLI::App& root, Common* c) {
  struct Opts {
    std::string gt;
    std::string out;
    int radius = 1;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("make-targets", "nuclei and border channels from GT");
  sub->add_option("--gt", o->gt, "ground-truth label maps")->required();
  sub->add_option("--out", o->out, "output directory")->required();
  sub->add_option("--radius", o->radius, "dilation radius (square element)")
      ->capture_default_str();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            if (o->radius < 1) throw ConfigError("--radius must be >= 1");
            const ImageSet gt = LoadImages(o->gt, *c);
            const fs::path out(o->out);
            EnsureDir(out);
            std::vector<const std::pair<const std::string, LabelMap>*> items;
            for (const auto& kv : gt) items.push_back(&kv);
            ParallelFor(items.size(), c->thread_count(), [&](size_t i) {
              const UnetTargets t = MakeUnetTargets(items[i]->second, o->radius);
              WriteBinaryPng(out / (items[i]->first + "_nuclei.png"), t.nuclei);
              WriteBinaryPng(out / (items[i]->first + "_borders.png"), t.borders);
            });
            WriteRunManifest(out, *sub, {{"--gt", o->gt}}, start);
            log << "wrote targets for " << gt.size() << " images to " << out.string() << "\n";
          }};
}

Command AddPostprocess(CLI::App& root, Common* c) {
  struct Opts {
    std::string pred;
    std::string nuclei_dir;
    std::string borders_dir;
    std::string out;
    int64_t min_area = 10;
    std::string watershed = "on";
    std::string markerless = "keep";
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("postprocess", "clean predicted instance masks");
  sub->add_option("--pred", o->pred, "predicted label maps");
  sub->add_option("--nuclei-dir", o->nuclei_dir, "semantic channel PNGs (<id>_nuclei.png)");
  sub->add_option("--borders-dir", o->borders_dir, "border channel PNGs (<id>_borders.png)");
  sub->add_option("--out", o->out, "output directory")->required();
  sub->add_option("--min-area", o->min_area)->capture_default_str();
  sub->add_option("--watershed", o->watershed)
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  sub->add_option("--markerless", o->markerless, "unreached components: keep or drop")
      ->check(CLI::IsMember({"keep", "drop"}))
      ->capture_default_str();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            if (o->pred.empty() == o->nuclei_dir.empty()) {
              throw ConfigError("give exactly one of --pred and --nuclei-dir");
            }
            if (o->min_area < 0) throw ConfigError("--min-area must be >= 0");
            CleanConfig cfg;
            cfg.min_area = o->min_area;
            cfg.watershed = o->watershed == "on";
            cfg.watershed_config.markerless_policy =
                o->markerless == "drop" ? MarkerlessPolicy::kDrop : MarkerlessPolicy::kNewLabel;

            auto borders_for = [&](const std::string& id, int h, int w) -> std::optional<BinaryMask> {
              if (o->borders_dir.empty()) return std::nullopt;
              const fs::path p = fs::path(o->borders_dir) / (id + "_borders.png");
              BinaryMask b = ReadBinaryPng(p);
              if (b.height() != h || b.width() != w) {
                throw DimensionMismatch(p.string() + " does not match the size of image '" + id +
                                        "'");
              }
              return b;
            };

            // (id, semantic mask or label map) per image.
            std::vector<std::string> ids;
            std::vector<LabelMap> maps;
            std::vector<BinaryMask> semantic;
            std::vector<std::pair<std::string, fs::path>> inputs;
            if (!o->pred.empty()) {
              for (auto& [id, m] : LoadImages(o->pred, *c)) {
                ids.push_back(id);
                maps.push_back(std::move(m));
              }
              inputs.emplace_back("--pred", o->pred);
            } else {
              std::vector<fs::path> files;
              std::error_code ec;
              if (!fs::is_directory(o->nuclei_dir, ec)) {
                throw IoError("no such directory: " + o->nuclei_dir);
              }
              for (const auto& e : fs::directory_iterator(o->nuclei_dir)) {
                const std::string stem = e.path().stem().string();
                if (e.path().extension() == ".png" && stem.ends_with("_nuclei")) {
                  files.push_back(e.path());
                }
              }
              std::sort(files.begin(), files.end());
              for (const fs::path& f : files) {
                const std::string stem = f.stem().string();
                ids.push_back(stem.substr(0, stem.size() - 7));
                semantic.push_back(ReadBinaryPng(f));
              }
              inputs.emplace_back("--nuclei-dir", o->nuclei_dir);
            }
            if (!o->borders_dir.empty()) inputs.emplace_back("--borders-dir", o->borders_dir);

            const fs::path out(o->out);
            EnsureDir(out);
            ParallelFor(ids.size(), c->thread_count(), [&](size_t i) {
              std::vector<InstanceMask> cleaned;
              int h = 0, w = 0;
              if (!maps.empty()) {
                h = maps[i].height();
                w = maps[i].width();
                const std::optional<BinaryMask> borders = borders_for(ids[i], h, w);
                cleaned = CleanPipeline(InstancesFromLabelMap(maps[i]), h, w,
                                        borders ? &*borders : nullptr, cfg);
              } else {
                h = semantic[i].height();
                w = semantic[i].width();
                const std::optional<BinaryMask> borders = borders_for(ids[i], h, w);
                cleaned = CleanPipeline(semantic[i], borders ? *borders : BinaryMask(h, w), cfg);
              }
              SaveImage(out, ids[i], LabelMapFromInstances(cleaned, h, w, OverlapPolicy::kError),
                        c->mask_format());
            });
            WriteRunManifest(out, *sub, inputs, start);
            log << "cleaned " << ids.size() << " images into " << out.string() << "\n";
          }};
}

Command AddFeatures(CLI::App& root, Common* c) {
  struct Opts {
    std::string pred;
    std::string gt;
    std::string source = "A";
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("features", "region features per predicted instance");
  sub->add_option("--pred", o->pred, "predicted label maps")->required();
  sub->add_option("--gt", o->gt, "ground truth; adds the TargetIoU column");
  sub->add_option("--source", o->source)->check(CLI::IsMember({"A", "B"}))->capture_default_str();
  sub->add_option("--out", o->out, "output directory")->required();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            const ImageSet preds = LoadImages(o->pred, *c);
            std::optional<ImageSet> gt;
            std::vector<std::pair<std::string, fs::path>> inputs{{"--pred", o->pred}};
            if (!o->gt.empty()) {
              gt = LoadImages(o->gt, *c);
              CheckSameIds(preds, *gt, "prediction set");
              inputs.emplace_back("--gt", o->gt);
            }
            std::vector<const std::pair<const std::string, LabelMap>*> items;
            for (const auto& kv : preds) items.push_back(&kv);
            std::vector<std::vector<FeatureRow>> per_image(items.size());
            ParallelFor(items.size(), c->thread_count(), [&](size_t i) {
              const auto& [id, map] = *items[i];
              const std::vector<InstanceMask> insts = InstancesFromLabelMap(map);
              std::vector<double> targets;
              if (gt) {
                const LabelMap& g = Lookup(*gt, id, "ground truth");
                CheckSameSize(map, g, "prediction", id);
                targets = BestIouTargets(insts, InstancesFromLabelMap(g));
              }
              for (size_t k = 0; k < insts.size(); ++k) {
                FeatureRow row{id, insts[k].id(), o->source[0],
                               MakeFeatureVector(ComputeProperties(insts[k]), map.height(),
                                                 map.width()),
                               std::nullopt};
                if (gt) row.target_iou = targets[k];
                per_image[i].push_back(std::move(row));
              }
            });
            std::vector<FeatureRow> rows;
            for (auto& v : per_image) rows.insert(rows.end(), v.begin(), v.end());
            const fs::path out(o->out);
            EnsureDir(out);
            WriteFeatureTable(out / "features.csv", rows);
            WriteRunManifest(out, *sub, inputs, start);
            log << "wrote " << rows.size() << " feature rows to " << (out / "features.csv").string()
                << "\n";
          }};
}

void WriteOofTable(const fs::path& path, const std::vector<OofRow>& rows) {
  std::string text = "ImageId,Source,InstanceId,Fold,Target,Prediction\n";
  for (const OofRow& r : rows) {
    text += r.image_id + ',' + r.source + ',' + std::to_string(r.instance_id) + ',' +
            std::to_string(r.fold) + ',' + FormatDouble(r.target) + ',' +
            FormatDouble(r.prediction) + '\n';
  }
  WriteText(path, text);
}

using ScoreKey = std::tuple<std::string, char, uint32_t>;

std::map<ScoreKey, double> ReadOofScores(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::map<ScoreKey, double> scores;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string_view> f = SplitCsvLine(line);
    if (f.size() != 6 || f[1].size() != 1) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    scores[{std::string(f[0]), f[1][0], static_cast<uint32_t>(ParseInteger(f[2]))}] =
        ParseDouble(f[5]);
  }
  return scores;
}

Command AddTrainFuser(CLI::App& root, Common* c) {
  struct Opts {
    CandidateInputs in;
    int folds = 4;
    TrainingConfig training;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("train-fuser", "out-of-fold training of the IoU regressor");
  AddCandidateOptions(sub, &o->in, true);
  sub->add_option("--folds", o->folds)->capture_default_str();
  sub->add_option("--trees", o->training.n_trees)->capture_default_str();
  sub->add_option("--depth", o->training.max_depth)->capture_default_str();
  sub->add_option("--min-leaf", o->training.min_samples_leaf)->capture_default_str();
  sub->add_option("--shrinkage", o->training.shrinkage)->capture_default_str();
  sub->add_option("--subsample", o->training.subsample)->capture_default_str();
  sub->add_option("--seed", o->training.seed)->capture_default_str();
  sub->add_option("--out", o->out, "output directory")->required();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            LoadedCandidates data = LoadCandidates(o->in, *c, true);
            std::vector<FusionImage> images;
            for (const auto& [id, g] : data.gt) {
              images.push_back({id, g.height(), g.width(),
                                InstancesFromLabelMap(Lookup(data.a, id, "source A")),
                                InstancesFromLabelMap(Lookup(data.b, id, "source B")),
                                InstancesFromLabelMap(g)});
            }
            const OofResult result = OofTrain(images, o->folds, o->training, c->thread_count());
            const fs::path out(o->out);
            EnsureDir(out);
            SaveModel(out / "model.txt", result.model);
            WriteOofTable(out / "oof.csv", result.rows);
            WriteRunManifest(out, *sub, data.inputs, start);
            log << "trained on " << result.rows.size() << " candidates from " << images.size()
                << " images; wrote " << (out / "model.txt").string() << "\n";
          }};
}

const char* StatusName(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::kBelowThreshold:
      return "below_threshold";
    case CandidateStatus::kKept:
      return "kept";
    case CandidateStatus::kSuppressed:
      return "suppressed";
  }
  return "unknown";
}

Command AddFuse(CLI::App& root, Common* c) {
  struct Opts {
    CandidateInputs in;
    std::string model;
    std::string oof;
    FusionConfig fusion;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("fuse", "fuse the two candidate sets");
  AddCandidateOptions(sub, &o->in, false);
  sub->add_option("--model", o->model, "trained model file");
  sub->add_option("--oof", o->oof, "use out-of-fold scores from this table instead of a model");
  sub->add_option("--score-threshold", o->fusion.score_threshold)->capture_default_str();
  sub->add_option("--nms-iou", o->fusion.nms_iou_threshold)->capture_default_str();
  sub->add_option("--out", o->out, "output directory")->required();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            if (o->model.empty() == o->oof.empty()) {
              throw ConfigError("give exactly one of --model and --oof");
            }
            o->fusion.Validate();
            LoadedCandidates data = LoadCandidates(o->in, *c, false);
            std::vector<std::pair<std::string, fs::path>> inputs = data.inputs;
            std::optional<GbmModel> model;
            std::map<ScoreKey, double> oof;
            if (!o->model.empty()) {
              model = LoadModel(o->model);
              inputs.emplace_back("--model", o->model);
            } else {
              oof = ReadOofScores(o->oof);
              inputs.emplace_back("--oof", o->oof);
            }

            std::vector<const std::pair<const std::string, LabelMap>*> items;
            for (const auto& kv : data.a) items.push_back(&kv);
            std::vector<FusionResult> results(items.size());
            const fs::path out(o->out);
            EnsureDir(out);
            ParallelFor(items.size(), c->thread_count(), [&](size_t i) {
              const std::string& id = items[i]->first;
              const LabelMap& a = items[i]->second;
              const std::vector<InstanceMask> ca = InstancesFromLabelMap(a);
              const std::vector<InstanceMask> cb =
                  InstancesFromLabelMap(Lookup(data.b, id, "source B"));
              auto scores = [&](const std::vector<InstanceMask>& cands, char source) {
                if (model) return model->PredictBatch(FeaturizeInstances(cands, a.height(), a.width()));
                std::vector<double> s;
                for (const InstanceMask& m : cands) {
                  const auto it = oof.find({id, source, m.id()});
                  if (it == oof.end()) {
                    throw FormatError(o->oof + ": no score for image '" + id + "' source " +
                                      source + " instance " + std::to_string(m.id()));
                  }
                  s.push_back(it->second);
                }
                return s;
              };
              const std::vector<double> sa = scores(ca, 'A');
              const std::vector<double> sb = scores(cb, 'B');
              results[i] = FuseScored(ca, sa, cb, sb, a.height(), a.width(), o->fusion);
              SaveImage(out, id, results[i].labels, c->mask_format());
            });
            std::string prov = "ImageId,Source,InstanceId,Score,Status,OutputId\n";
            for (size_t i = 0; i < items.size(); ++i) {
              for (const FusionDecision& d : results[i].decisions) {
                prov += items[i]->first + ',' + d.source + ',' + std::to_string(d.instance_id) +
                        ',' + FormatDouble(d.score) + ',' + StatusName(d.status) + ',' +
                        std::to_string(d.output_id) + '\n';
              }
            }
            WriteText(out / "provenance.csv", prov);
            WriteRunManifest(out, *sub, inputs, start);
            log << "fused " << items.size() << " images into " << out.string() << "\n";
          }};
}

std::string ApCurveCsv(const std::vector<std::pair<std::string, MapResult>>& curves) {
  std::string text = "Model,Threshold,AP\n";
  for (const auto& [name, m] : curves) {
    for (size_t k = 0; k < kIouThresholds.size(); ++k) {
      text += name + ',' + FormatDouble(kIouThresholds[k]) + ',' +
              FormatDouble(m.ap_by_threshold[k]) + '\n';
    }
  }
  return text;
}

struct EvalOpts {
  std::string gt;
  std::vector<std::string> preds;
  double threshold = kReportThreshold;
  std::string out;
};

void AddEvalOptions(CLI::App* sub, EvalOpts* o) {
  sub->add_option("--gt", o->gt, "ground-truth label maps")->required();
  sub->add_option("--pred", o->preds, "prediction set as NAME=PATH (repeatable)")
      ->required()
      ->take_all();
  sub->add_option("--threshold", o->threshold, "IoU threshold for matching")
      ->capture_default_str();
  sub->add_option("--out", o->out, "output directory")->required();
}

std::vector<std::pair<std::string, fs::path>> EvalInputs(const EvalOpts& o,
                                                         const std::vector<NamedPreds>& sets) {
  std::vector<std::pair<std::string, fs::path>> inputs{{"--gt", o.gt}};
  for (const NamedPreds& s : sets) inputs.emplace_back("--pred " + s.name, s.path);
  return inputs;
}

Command AddEvaluate(CLI::App& root, Common* c) {
  struct Opts : EvalOpts {
    std::string aggregate = "micro";
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("evaluate", "mAP, Dice and detection statistics");
  AddEvalOptions(sub, o.get());
  sub->add_option("--aggregate", o->aggregate, "precision/recall aggregation")
      ->check(CLI::IsMember({"micro", "macro"}))
      ->capture_default_str();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            const std::vector<NamedPreds> sets = LoadEvaluationInputs(o->gt, o->preds, *c);
            const Aggregation agg =
                o->aggregate == "macro" ? Aggregation::kMacro : Aggregation::kMicro;
            std::string report = "Model,mAP,Dice,Precision,Recall,oseg,useg\n";
            std::vector<std::pair<std::string, MapResult>> curves;
            for (const NamedPreds& s : sets) {
              const EvalReport r = Evaluate(s.pairs, o->threshold, agg, c->thread_count());
              report += s.name + ',' + FormatDouble(r.map.map_score) + ',' +
                        FormatDouble(r.object_dice) + ',' + FormatDouble(r.stats.precision) + ',' +
                        FormatDouble(r.stats.recall) + ',' + std::to_string(r.stats.oseg_count) +
                        ',' + std::to_string(r.stats.useg_count) + '\n';
              curves.emplace_back(s.name, r.map);
            }
            const fs::path out(o->out);
            EnsureDir(out);
            WriteText(out / "report.csv", report);
            WriteText(out / "ap_curve.csv", ApCurveCsv(curves));
            WriteRunManifest(out, *sub, EvalInputs(*o, sets), start);
            log << report;
          }};
}

Command AddAnalyze(CLI::App& root, Common* c) {
  struct Opts : EvalOpts {
    int bins = 4;
    int cluster_radius = 1;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = root.add_subcommand("analyze", "recall by nucleus area, eccentricity, cluster size");
  AddEvalOptions(sub, o.get());
  sub->add_option("--bins", o->bins, "equal-count bins for area and eccentricity")
      ->capture_default_str();
  sub->add_option("--cluster-radius", o->cluster_radius)->capture_default_str();
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            if (o->cluster_radius < 1) throw ConfigError("--cluster-radius must be >= 1");
            const std::vector<NamedPreds> sets = LoadEvaluationInputs(o->gt, o->preds, *c);
            const fs::path out(o->out);
            EnsureDir(out);
            for (SensitivityProperty prop :
                 {SensitivityProperty::kArea, SensitivityProperty::kEccentricity,
                  SensitivityProperty::kClusterSize}) {
              std::string text = "Model,Bin,Low,High,GtCount,Matched,Recall\n";
              for (const NamedPreds& s : sets) {
                const SensitivityReport r =
                    ComputeSensitivity(s.pairs, prop, o->bins, o->threshold, o->cluster_radius);
                for (size_t b = 0; b < r.bins.size(); ++b) {
                  const SensitivityBin& bin = r.bins[b];
                  text += s.name + ',' + std::to_string(b) + ',' + FormatDouble(bin.low) + ',' +
                          FormatDouble(bin.high) + ',' + std::to_string(bin.gt_count) + ',' +
                          std::to_string(bin.matched) + ',' + FormatDouble(bin.recall) + '\n';
                }
              }
              const fs::path file =
                  out / (std::string("sensitivity_") + SensitivityPropertyName(prop) + ".csv");
              WriteText(file, text);
              log << "wrote " << file.string() << "\n";
            }
            WriteRunManifest(out, *sub, EvalInputs(*o, sets), start);
          }};
}

Command AddApCurve(CLI::App& root, Common* c) {
  auto o = std::make_shared<EvalOpts>();
  CLI::App* sub = root.add_subcommand("ap-curve", "AP at each IoU threshold 0.50..0.95");
  AddEvalOptions(sub, o.get());
  AddCommon(sub, c);
  return {sub, [o, c, sub](std::ostream& log) {
            const auto start = Clock::now();
            const std::vector<NamedPreds> sets = LoadEvaluationInputs(o->gt, o->preds, *c);
            std::vector<std::pair<std::string, MapResult>> curves;
            for (const NamedPreds& s : sets) {
              curves.emplace_back(s.name, Evaluate(s.pairs, o->threshold, Aggregation::kMicro,
                                                   c->thread_count())
                                              .map);
            }
            const fs::path out(o->out);
            EnsureDir(out);
            const std::string text = ApCurveCsv(curves);
            WriteText(out / "ap_curve.csv", text);
            WriteRunManifest(out, *sub, EvalInputs(*o, sets), start);
            log << text;
          }};
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instance mask post-processing, fusion and evaluation", "maskfuse"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Common common;
  const std::vector<Command> commands = {
      AddSynth(app, &common),      AddMakeTargets(app, &common), AddPostprocess(app, &common),
      AddFeatures(app, &common),   AddTrainFuser(app, &common),  AddFuse(app, &common),
      AddEvaluate(app, &common),   AddAnalyze(app, &common),     AddApCurve(app, &common)};

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* context = &app;
    for (const Command& cmd : commands) {
      if (cmd.app->parsed()) context = cmd.app;
    }
    err << context->help();
    return 1;
  }

  try {
    for (const Command& cmd : commands) {
      if (cmd.app->parsed()) cmd.run(out);
    }
    return 0;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace maskfuse
