#include "piper/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "piper/error.hpp"
#include "piper/io.hpp"
#include "piper/rng.hpp"

namespace piper {

void SynthConfig::validate() const {
  const std::size_t p = parts();
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "synth config: " + what); };
  if (n_identities + n_val_identities + n_train_identities == 0) fail("no identities");
  if (min_instances < 2) fail("every identity needs at least 2 instances");
  if (max_instances < min_instances) fail("max_instances < min_instances");
  if (pose_states == 0) fail("pose_states must be positive");
  if (feature_dim.size() != p || noise_sigma.size() != p || informativeness.size() != p ||
      activation_prob.size() != p) {
    fail("per-part vectors must have one entry per part (" + std::to_string(p) + ")");
  }
  for (auto d : feature_dim) {
    if (d == 0) fail("feature dimensions must be positive");
  }
  for (std::size_t i = 0; i < p; ++i) {
    if (!(noise_sigma[i] >= 0) || !(informativeness[i] >= 0)) fail("noise and informativeness must be >= 0");
    if (i == 0) continue;
    if (activation_prob[i].size() != pose_states) fail("activation_prob rows need one entry per pose state");
    for (double a : activation_prob[i]) {
      if (!(a >= 0.0 && a <= 1.0)) fail("activation probabilities must lie in [0, 1]");
    }
  }
  if (!(pose_offset >= 0)) fail("pose_offset must be >= 0");
  if (identities_per_uploader == 0 || albums_per_uploader == 0 || max_people_per_photo == 0) {
    fail("uploader, album and photo sizes must be positive");
  }
  if (!(false_positive_rate >= 0 && false_positive_rate <= 1)) fail("false_positive_rate must lie in [0, 1]");
}

SynthConfig default_synth_config() {
  SynthConfig cfg;
  const std::size_t p = cfg.parts();
  cfg.feature_dim.assign(p, 32);
  cfg.activation_prob.assign(p, std::vector<double>(cfg.pose_states, 0.05));
  cfg.activation_prob[0].assign(cfg.pose_states, 1.0);
  for (std::size_t i = 1; i <= cfg.n_poselets; ++i) {
    // Each poselet prefers one pose; the first four fire more readily.
    const std::size_t preferred = (i - 1) % cfg.pose_states;
    cfg.activation_prob[i][preferred] = i <= 4 ? 0.6 : 0.35;
    cfg.activation_prob[i][(preferred + 1) % cfg.pose_states] = i <= 4 ? 0.2 : 0.1;
  }
  cfg.activation_prob[p - 1] = {0.85, 0.65, 0.45, 0.13};  // face, mean 0.52
  cfg.noise_sigma.assign(p, 1.3);
  cfg.noise_sigma[0] = 1.6;
  cfg.noise_sigma[p - 1] = 0.8;
  cfg.informativeness.assign(p, 1.0);
  cfg.pose_offset = 1.0;
  return cfg;
}

namespace {

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base) {
  if (!j.is_object()) throw Error(ErrorCode::Format, "synth config must be a JSON object");
  static const char* known[] = {"n_identities", "n_val_identities", "n_train_identities", "min_instances",
                                "max_instances", "n_poselets", "face", "pose_states", "feature_dim",
                                "activation_prob", "noise_sigma", "informativeness", "pose_offset",
                                "identities_per_uploader", "albums_per_uploader", "max_people_per_photo",
                                "false_positive_rate", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known)) {
      throw Error(ErrorCode::Format, "unknown synth config key '" + key + "'");
    }
  }
  try {
    maybe(j, "n_identities", base.n_identities);
    maybe(j, "n_val_identities", base.n_val_identities);
    maybe(j, "n_train_identities", base.n_train_identities);
    maybe(j, "min_instances", base.min_instances);
    maybe(j, "max_instances", base.max_instances);
    maybe(j, "n_poselets", base.n_poselets);
    maybe(j, "face", base.face);
    maybe(j, "pose_states", base.pose_states);
    maybe(j, "feature_dim", base.feature_dim);
    maybe(j, "activation_prob", base.activation_prob);
    maybe(j, "noise_sigma", base.noise_sigma);
    maybe(j, "informativeness", base.informativeness);
    maybe(j, "pose_offset", base.pose_offset);
    maybe(j, "identities_per_uploader", base.identities_per_uploader);
    maybe(j, "albums_per_uploader", base.albums_per_uploader);
    maybe(j, "max_people_per_photo", base.max_people_per_photo);
    maybe(j, "false_positive_rate", base.false_positive_rate);
    maybe(j, "seed", base.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("synth config: ") + e.what());
  }
  base.validate();
  return base;
}

nlohmann::json to_json(const SynthConfig& c) {
  return nlohmann::json{{"n_identities", c.n_identities},
                        {"n_val_identities", c.n_val_identities},
                        {"n_train_identities", c.n_train_identities},
                        {"min_instances", c.min_instances},
                        {"max_instances", c.max_instances},
                        {"n_poselets", c.n_poselets},
                        {"face", c.face},
                        {"pose_states", c.pose_states},
                        {"feature_dim", c.feature_dim},
                        {"activation_prob", c.activation_prob},
                        {"noise_sigma", c.noise_sigma},
                        {"informativeness", c.informativeness},
                        {"pose_offset", c.pose_offset},
                        {"identities_per_uploader", c.identities_per_uploader},
                        {"albums_per_uploader", c.albums_per_uploader},
                        {"max_people_per_photo", c.max_people_per_photo},
                        {"false_positive_rate", c.false_positive_rate},
                        {"seed", c.seed}};
}

namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> gaussian(Rng& rng, std::size_t d, double scale) {
  std::vector<double> v(d);
  const double s = scale / std::sqrt(static_cast<double>(d));
  for (auto& x : v) x = s * rng.normal();
  return v;
}

std::string padded(std::size_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04zu", v);
  return buf;
}

struct PendingInstance {
  std::size_t record;
  std::size_t album;
};

}  // namespace

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n_parts = cfg.parts();
  SynthOutput out;

  std::vector<PartInfo> parts{{0, "global", PartKind::Global}};
  for (std::size_t i = 1; i <= cfg.n_poselets; ++i) {
    parts.push_back({static_cast<std::uint32_t>(i), "poselet-" + padded(i), PartKind::Poselet});
  }
  if (cfg.face) parts.push_back({static_cast<std::uint32_t>(n_parts - 1), "face", PartKind::Face});
  out.registry = PartRegistry(parts);
  for (std::size_t p = 0; p < n_parts; ++p) out.features.emplace_back(static_cast<std::uint32_t>(p), cfg.feature_dim[p]);

  Rng structure(derive_seed(cfg.seed, "structure"));
  Rng proto_rng(derive_seed(cfg.seed, "prototypes"));
  Rng act_rng(derive_seed(cfg.seed, "activations"));
  Rng noise_rng(derive_seed(cfg.seed, "noise"));
  Rng geom_rng(derive_seed(cfg.seed, "geometry"));

  std::vector<std::vector<double>> pose_offsets;
  for (std::size_t s = 0; s < cfg.pose_states; ++s) pose_offsets.push_back(gaussian(proto_rng, cfg.feature_dim[0], cfg.pose_offset));

  struct SplitSpec {
    Split split;
    std::size_t identities;
  };
  const SplitSpec specs[] = {{Split::Train, cfg.n_train_identities},
                             {Split::Val, cfg.n_val_identities},
                             {Split::Test, cfg.n_identities}};
  InstanceId next_instance = 1;
  DetectionId next_detection = 1;

  for (const auto& spec : specs) {
    if (spec.identities == 0) continue;
    const std::string split_name = to_string(spec.split);
    const std::size_t n_uploaders = (spec.identities + cfg.identities_per_uploader - 1) / cfg.identities_per_uploader;
    std::vector<std::vector<PendingInstance>> by_album(n_uploaders * cfg.albums_per_uploader);

    for (std::size_t k = 0; k < spec.identities; ++k) {
      const std::string label = split_name + "-" + padded(k);
      const std::size_t uploader = k % n_uploaders;
      std::vector<std::vector<double>> protos;
      for (std::size_t p = 0; p < n_parts; ++p) protos.push_back(gaussian(proto_rng, cfg.feature_dim[p], cfg.informativeness[p]));

      const std::size_t count = cfg.min_instances + structure.below(cfg.max_instances - cfg.min_instances + 1);
      for (std::size_t c = 0; c < count; ++c) {
        const InstanceId id = next_instance++;
        const std::size_t album = uploader * cfg.albums_per_uploader + structure.below(cfg.albums_per_uploader);
        const std::size_t pose = structure.below(cfg.pose_states);
        IndexRecord r;
        r.instance_id = id;
        r.uploader_id = split_name + "-u" + padded(uploader);
        r.album_id = r.uploader_id + "-a" + padded(album % cfg.albums_per_uploader);
        r.identity_label = label;
        r.split = spec.split;
        out.records.push_back(std::move(r));
        out.pose.push_back(pose);
        by_album[album].push_back({out.records.size() - 1, album});

        auto& acts = out.truth_activations[id];
        acts.push_back(PartActivation{0, BBox{}, 1.0});
        for (std::size_t p = 0; p < n_parts; ++p) {
          const bool fired = p == 0 || act_rng.bernoulli(cfg.activation_prob[p][pose]);
          if (!fired) continue;
          auto x = protos[p];
          const auto noise = gaussian(noise_rng, cfg.feature_dim[p], cfg.noise_sigma[p]);
          for (std::size_t d = 0; d < x.size(); ++d) {
            x[d] += noise[d] + (p == 0 ? pose_offsets[pose][d] : 0.0);
            x[d] = to_f32(x[d]);
          }
          out.features[p].add(id, x);
          if (p != 0) acts.push_back(PartActivation{static_cast<std::uint32_t>(p), BBox{}, 0.0});
        }
      }
    }

    // Group each album's instances into photos and lay out heads side by side.
    for (std::size_t a = 0; a < by_album.size(); ++a) {
      auto& members = by_album[a];
      structure.shuffle(std::span<PendingInstance>(members));
      std::size_t photo_no = 0;
      for (std::size_t start = 0; start < members.size(); ++photo_no) {
        const std::size_t size = std::min(members.size() - start, 1 + structure.below(cfg.max_people_per_photo));
        const std::string photo = out.records[members[start].record].album_id + "-p" + padded(photo_no);
        std::vector<Detection> dets;
        for (std::size_t slot = 0; slot < size; ++slot) {
          IndexRecord& r = out.records[members[start + slot].record];
          r.photo_id = photo;
          const double side = to_f32(geom_rng.uniform(30.0, 50.0));
          r.head = BBox{to_f32(40.0 + 300.0 * static_cast<double>(slot) + geom_rng.uniform(-10.0, 10.0)),
                        to_f32(30.0 + geom_rng.uniform(-10.0, 10.0)), side, side};

          const BBox body = body_from_head(r.head);
          const double scale = geom_rng.uniform(0.95, 1.05);
          Detection d;
          d.person_box = BBox{to_f32(body.x + geom_rng.uniform(-0.05, 0.05) * body.w),
                              to_f32(body.y + geom_rng.uniform(-0.05, 0.05) * body.h), to_f32(body.w * scale),
                              to_f32(body.h * scale)};
          d.score = to_f32(geom_rng.uniform(0.4, 1.0));
          auto& acts = out.truth_activations[r.instance_id];
          for (auto& act : acts) {
            if (act.part_id == 0) {
              act.patch = d.person_box;
              act.score = d.score;
              continue;
            }
            const bool is_face = cfg.face && act.part_id == n_parts - 1;
            act.patch = is_face ? r.head
                                : BBox{to_f32(d.person_box.x + geom_rng.uniform(0.0, 0.6) * d.person_box.w),
                                       to_f32(d.person_box.y + geom_rng.uniform(0.0, 0.6) * d.person_box.h),
                                       to_f32(0.3 * d.person_box.w), to_f32(0.3 * d.person_box.h)};
            act.score = to_f32(geom_rng.uniform(0.2, 1.0));
            d.activations.push_back(act);
          }
          dets.push_back(std::move(d));
        }
        if (geom_rng.bernoulli(cfg.false_positive_rate)) {
          Detection fp;
          fp.person_box = BBox{to_f32(40.0 + 300.0 * static_cast<double>(size) + geom_rng.uniform(0.0, 50.0)),
                               to_f32(geom_rng.uniform(0.0, 60.0)), 120.0, 240.0};
          fp.score = to_f32(geom_rng.uniform(0.0, 0.5));
          dets.push_back(std::move(fp));
        }
        // Detection ids do not follow truth order.
        std::vector<DetectionId> ids(dets.size());
        for (auto& v : ids) v = next_detection++;
        geom_rng.shuffle(std::span<DetectionId>(ids));
        for (std::size_t k = 0; k < dets.size(); ++k) dets[k].detection_id = ids[k];
        std::sort(dets.begin(), dets.end(), [](const auto& x, const auto& y) { return x.detection_id < y.detection_id; });
        out.detections[photo] = std::move(dets);
        start += size;
      }
    }
  }
  return out;
}

std::vector<std::filesystem::path> write_synth(const SynthOutput& out, const SynthConfig& cfg,
                                               const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& rel, const std::string& contents) {
    write_file_atomic(dir / rel, contents);
    written.push_back(rel);
  };
  {
    std::ostringstream s;
    write_dataset(s, out.records);
    emit("dataset.tsv", s.str());
  }
  {
    std::ostringstream s;
    for (const auto& p : out.registry.parts()) s << p.part_id << '\t' << p.name << '\t' << to_string(p.kind) << '\n';
    emit("registry.tsv", s.str());
  }
  {
    std::ostringstream s;
    write_detections(s, out.detections);
    emit("detections.tsv", s.str());
  }
  {
    std::ostringstream s;
    write_activation_table(s, out.truth_activations);
    emit("truth_activations.tsv", s.str());
  }
  emit("synth_config.json", to_json(cfg).dump(2) + "\n");
  for (const auto& m : out.features) {
    std::ostringstream s(std::ios::binary);
    write_features(s, m);
    emit(fs::path("features") / feature_file_name(m.part_id()), s.str());
  }
  return written;
}

}  // namespace piper
