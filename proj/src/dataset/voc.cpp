#include "mlpmatch/dataset/voc.hpp"

#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "mlpmatch/io/png_mask.hpp"

namespace fs = std::filesystem;

namespace mlpmatch::dataset {
namespace {

std::string find_image_path(const std::string& root, const std::string& id) {
  for (const char* ext : {".jpg", ".png", ".jpeg"}) {
    const fs::path p = fs::path(root) / "images" / (id + ext);
    if (fs::exists(p)) return p.string();
  }
  throw DataError("image for id '" + id + "' not found under " + root + "/images");
}

Image load_image(const std::string& path, const std::string& id) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image for id '" + id + "': " + path);
  Image img({3, bgr.rows, bgr.cols});
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at3(0, y, x) = static_cast<float>(row[x][2]) / 255.0f;
      img.at3(1, y, x) = static_cast<float>(row[x][1]) / 255.0f;
      img.at3(2, y, x) = static_cast<float>(row[x][0]) / 255.0f;
    }
  }
  return img;
}

LabelMap load_mask(const std::string& root, const std::string& id, int num_classes) {
  const fs::path p = fs::path(root) / "masks" / (id + ".png");
  if (!fs::exists(p)) throw DataError("mask for id '" + id + "' not found: " + p.string());
  LabelMap mask = io::read_mask_png(p.string());
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    const std::int32_t v = mask[i];
    if (v != kIgnoreLabel && (v < 0 || v >= num_classes))
      throw DataError("mask for id '" + id + "' has value " + std::to_string(v) +
                      " outside {0.." + std::to_string(num_classes - 1) + ", 255}");
  }
  return mask;
}

}  // namespace

std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && (line[b] == ' ' || line[b] == '\t')) ++b;
    line.erase(0, b);
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::vector<Sample> load_voc_samples(const std::string& root,
                                     const std::vector<std::string>& ids, int num_classes,
                                     bool with_labels) {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    Sample s;
    s.id = id;
    s.image = load_image(find_image_path(root, id), id);
    if (with_labels) {
      s.label = load_mask(root, id, num_classes);
      if (s.label->dim(0) != s.image.dim(1) || s.label->dim(1) != s.image.dim(2))
        throw DataError("id '" + id + "': image and mask dimensions differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> load_voc_dir(const std::string& root,
                                                                 const SplitSpec& split) {
  validate_split(split);
  if (!fs::is_directory(fs::path(root) / "images"))
    throw DataError("missing images directory under " + root);
  if (!fs::is_directory(fs::path(root) / "masks"))
    throw DataError("missing masks directory under " + root);
  auto labeled = load_voc_samples(root, split.labeled_ids, split.num_classes, true);
  auto unlabeled = load_voc_samples(root, split.unlabeled_ids, split.num_classes, false);
  return {std::move(labeled), std::move(unlabeled)};
}

void write_voc_dir(const std::string& root, const std::vector<Sample>& labeled,
                   const std::vector<Sample>& unlabeled, const std::vector<Sample>& val) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  fs::create_directories(fs::path(root) / "splits");
  const auto palette = io::voc_palette();

  auto write_image = [&](const Sample& s) {
    cv::Mat bgr(s.height(), s.width(), CV_8UC3);
    for (int y = 0; y < s.height(); ++y) {
      auto* row = bgr.ptr<cv::Vec3b>(y);
      for (int x = 0; x < s.width(); ++x) {
        row[x][2] = cv::saturate_cast<unsigned char>(s.image.at3(0, y, x) * 255.0f);
        row[x][1] = cv::saturate_cast<unsigned char>(s.image.at3(1, y, x) * 255.0f);
        row[x][0] = cv::saturate_cast<unsigned char>(s.image.at3(2, y, x) * 255.0f);
      }
    }
    const fs::path p = fs::path(root) / "images" / (s.id + ".png");
    if (!cv::imwrite(p.string(), bgr)) throw DataError("cannot write image: " + p.string());
  };

  auto write_list = [&](const char* name, const std::vector<Sample>& samples) {
    std::ofstream out((fs::path(root) / "splits" / name).string());
    for (const auto& s : samples) out << s.id << "\n";
  };

  for (const auto& s : labeled) {
    write_image(s);
    if (!s.label) throw ContractError("write_voc_dir: labeled sample without label: " + s.id);
    io::write_mask_png((fs::path(root) / "masks" / (s.id + ".png")).string(), *s.label, palette);
  }
  for (const auto& s : unlabeled) write_image(s);
  for (const auto& s : val) {
    write_image(s);
    if (!s.label) throw ContractError("write_voc_dir: val sample without label: " + s.id);
    io::write_mask_png((fs::path(root) / "masks" / (s.id + ".png")).string(), *s.label, palette);
  }
  write_list("labeled.txt", labeled);
  write_list("unlabeled.txt", unlabeled);
  write_list("val.txt", val);
}

}  // namespace mlpmatch::dataset
