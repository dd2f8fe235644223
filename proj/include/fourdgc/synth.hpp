#pragma once

#include <filesystem>

#include <json.hpp>

#include "fourdgc/render.hpp"

namespace fourdgc {

enum class MotionKind { translate, rotate, mixed, birth };

inline MotionKind motion_kind_from(const std::string& s) {
  if (s == "translate") return MotionKind::translate;
  if (s == "rotate") return MotionKind::rotate;
  if (s == "mixed") return MotionKind::mixed;
  if (s == "birth") return MotionKind::birth;
  throw std::invalid_argument("unknown motion kind: " + s);
}

/// Deterministic multi-view test scene. Ground truth per frame, a camera
/// ring, and supervision images rendered by the same renderer (quantized to
/// 8 bits, matching the PPM files on disk).
struct SyntheticScene {
  std::vector<GaussianFrameSet> gt_frames;
  std::vector<Camera> cameras;
  GaussianFrameSet init;  // perturbed keyframe initialization
  int test_view = 0;
  uint64_t seed = 0;
  Vec3 background{0, 0, 0};

  int train_view_count() const { return static_cast<int>(cameras.size()) - 1; }

  std::vector<int> train_views() const {
    std::vector<int> v;
    for (int i = 0; i < static_cast<int>(cameras.size()); ++i)
      if (i != test_view) v.push_back(i);
    return v;
  }

  /// 8-bit-quantized rendering of ground truth (identical to the PPM files).
  Image truth_image(int frame, int view) const {
    Image img = render(gt_frames[frame], cameras[view], background).pixels;
    for (auto& v : img.pixels) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return img;
  }

  std::vector<Image> train_images(int frame) const {
    std::vector<Image> out;
    for (int v : train_views()) out.push_back(truth_image(frame, v));
    return out;
  }

  std::vector<Camera> train_cameras() const {
    std::vector<Camera> out;
    for (int v : train_views()) out.push_back(cameras[v]);
    return out;
  }
};

namespace detail {

inline Quat random_unit_quat(Rng& rng) {
  Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  return normalized(q);
}

inline Quat axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = normalized(axis);
  const double s = std::sin(angle / 2);
  return {std::cos(angle / 2), a.x * s, a.y * s, a.z * s};
}

}  // namespace detail

struct SynthOptions {
  uint64_t seed = 7;
  int n_frames = 5;
  int n_gaussians = 12;
  int n_views = 4;
  MotionKind kind = MotionKind::mixed;
  int width = 64, height = 64;
  int sh_degree = 1;
  int init_duplicates = 2;  // keyframe init holds this many jittered copies per primitive
};

inline SyntheticScene synth_scene(const SynthOptions& opt) {
  if (opt.n_frames < 2 || opt.n_views < 2 || opt.n_gaussians < 4)
    throw std::invalid_argument("synth_scene: need n_frames >= 2, n_views >= 2, n_gaussians >= 4");
  SyntheticScene scene;
  scene.seed = opt.seed;
  Rng rng(derive_seed(opt.seed, 0x5c));

  // camera ring looking at the origin
  for (int v = 0; v < opt.n_views; ++v) {
    const double ang = 2.0 * 3.14159265358979323846 * v / opt.n_views;
    const Vec3 eye{3.0 * std::cos(ang), 3.0 * std::sin(ang), 1.2};
    scene.cameras.push_back(look_at(eye, {0, 0, 0}, {0, 0, 1}, 1.2 * opt.width,
                                    1.2 * opt.width, opt.width, opt.height));
  }
  scene.test_view = opt.n_views - 1;

  const int shn = sh_coeff_count(opt.sh_degree);
  GaussianFrameSet base;
  base.frame_index = 1;
  base.sh_degree = opt.sh_degree;
  for (int i = 0; i < opt.n_gaussians; ++i) {
    GaussianPrimitive g;
    g.center = {rng.uniform(-0.55, 0.55), rng.uniform(-0.55, 0.55), rng.uniform(-0.45, 0.45)};
    g.rotation = detail::random_unit_quat(rng);
    g.log_scale = {std::log(rng.uniform(0.10, 0.22)), std::log(rng.uniform(0.10, 0.22)),
                   std::log(rng.uniform(0.10, 0.22))};
    g.opacity = rng.uniform(0.55, 0.95);
    g.sh.assign(static_cast<size_t>(3 * shn), 0.0);
    for (int ch = 0; ch < 3; ++ch)
      g.sh[ch] = (rng.uniform(0.15, 0.85) - 0.5) / sh::kC0;
    for (int k = 1; k < shn; ++k)
      for (int ch = 0; ch < 3; ++ch) g.sh[3 * k + ch] = rng.uniform(-0.12, 0.12);
    base.primitives.push_back(std::move(g));
  }
  scene.gt_frames.push_back(base);

  // scripted motion, applied cumulatively
  const Vec3 translate_step = opt.kind == MotionKind::birth ? Vec3{0.02, 0.01, 0.0}
                                                            : Vec3{0.10, 0.04, 0.0};
  const Quat rot_step = detail::axis_angle({0.2, 0.1, 1.0}, 0.35);
  const int birth_frame = 2;  // 1-based; the frame that gains a primitive
  for (int f = 2; f <= opt.n_frames; ++f) {
    GaussianFrameSet next = scene.gt_frames.back();
    next.frame_index = f;
    const bool do_translate =
        opt.kind == MotionKind::translate || opt.kind == MotionKind::mixed ||
        opt.kind == MotionKind::birth;
    const bool do_rotate = opt.kind == MotionKind::rotate || opt.kind == MotionKind::mixed;
    for (auto& g : next.primitives) {
      if (do_translate) g.center += translate_step;
      if (do_rotate) g.rotation = compose_rotation(rot_step, g.rotation);
    }
    if (opt.kind == MotionKind::birth && f == birth_frame) {
      GaussianPrimitive g;
      g.center = {0.30, -0.30, 0.25};
      g.rotation = Quat{};
      g.log_scale = {std::log(0.16), std::log(0.16), std::log(0.16)};
      g.opacity = 0.92;
      g.sh.assign(static_cast<size_t>(3 * shn), 0.0);
      g.sh[0] = (0.92 - 0.5) / sh::kC0;  // bright red
      g.sh[1] = (0.15 - 0.5) / sh::kC0;
      g.sh[2] = (0.12 - 0.5) / sh::kC0;
      next.primitives.push_back(std::move(g));
    }
    scene.gt_frames.push_back(std::move(next));
  }

  // keyframe initialization: jittered duplicates of the frame-1 ground truth
  Rng jrng(derive_seed(opt.seed, 0x1d));
  scene.init.frame_index = 1;
  scene.init.sh_degree = opt.sh_degree;
  for (int dup = 0; dup < std::max(1, opt.init_duplicates); ++dup) {
    for (const auto& src : base.primitives) {
      GaussianPrimitive g = src;
      g.center += Vec3{jrng.normal(), jrng.normal(), jrng.normal()} * 0.02;
      g.log_scale += Vec3{jrng.normal(), jrng.normal(), jrng.normal()} * 0.08;
      Quat dq{1.0, 0.05 * jrng.normal(), 0.05 * jrng.normal(), 0.05 * jrng.normal()};
      g.rotation = compose_rotation(dq, g.rotation);
      g.opacity = std::clamp(g.opacity + 0.05 * jrng.normal(), 0.05, 0.95);
      for (auto& c : g.sh) c += 0.03 * jrng.normal();
      scene.init.primitives.push_back(std::move(g));
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Scene directory IO: cameras.json, per-frame/view PPM images, ground-truth
// and init .4dgs files.

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  std::vector<double> wc;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) wc.push_back(cam.rot(r, c));
    wc.push_back(cam.trans[r]);
  }
  j["world_to_camera"] = wc;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto wc = j.at("world_to_camera").get<std::vector<double>>();
  if (wc.size() != 12) throw FormatError("world_to_camera must have 12 entries");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.rot(r, c) = wc[r * 4 + c];
    cam.trans[r] = wc[r * 4 + 3];
  }
  if (!cam.valid()) throw FormatError("camera fails validation");
  return cam;
}

inline void save_cameras(const std::vector<Camera>& cams, int test_view,
                         const std::string& path) {
  nlohmann::json j;
  j["test_view"] = test_view;
  j["cameras"] = nlohmann::json::array();
  for (const auto& c : cams) j["cameras"].push_back(camera_to_json(c));
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

inline std::pair<std::vector<Camera>, int> load_cameras(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json j;
  f >> j;
  std::vector<Camera> cams;
  for (const auto& cj : j.at("cameras")) cams.push_back(camera_from_json(cj));
  return {cams, j.value("test_view", static_cast<int>(cams.size()) - 1)};
}

inline std::string frame_view_name(int frame, int view) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "f%04d_v%02d.ppm", frame, view);
  return buf;
}

inline void write_scene(const SyntheticScene& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_cameras(scene.cameras, scene.test_view, dir + "/cameras.json");
  for (size_t f = 0; f < scene.gt_frames.size(); ++f) {
    char name[64];
    std::snprintf(name, sizeof(name), "gt_f%04d.4dgs", static_cast<int>(f + 1));
    save_4dgs(scene.gt_frames[f], dir + "/" + name);
    for (size_t v = 0; v < scene.cameras.size(); ++v) {
      const Image img = scene.truth_image(static_cast<int>(f), static_cast<int>(v));
      write_ppm(img, dir + "/" + frame_view_name(static_cast<int>(f + 1), static_cast<int>(v)));
    }
  }
  save_4dgs(scene.init, dir + "/init.4dgs");
}

}  // namespace fourdgc
