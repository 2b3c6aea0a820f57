#include "siammask/dataset.hpp"

#include <stdexcept>

namespace siammask {

const ObjectAnnotation& Sequence::object(int id) const {
  for (const auto& o : objects) {
    if (o.id == id) return o;
  }
  throw std::out_of_range("sequence '" + name + "' has no object " + std::to_string(id));
}

void derive_boxes(ObjectAnnotation& object) {
  object.boxes.clear();
  object.rotated.clear();
  for (const auto& m : object.masks) {
    if (m.empty()) {
      object.boxes.push_back({});
      object.rotated.push_back({});
    } else {
      object.boxes.push_back(min_max_box(m));
      object.rotated.push_back(mbr(m));
    }
  }
}

cv::Mat instance_image(const Sequence& seq, int frame) {
  cv::Mat ids(seq.height(), seq.width(), CV_8UC1, cv::Scalar(0));
  for (const auto& o : seq.objects) {
    const auto v = o.masks[frame].values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (v[k]) ids.data[k] = static_cast<std::uint8_t>(o.id);
    }
  }
  return ids;
}

BinaryMask mask_from_ids(const cv::Mat& ids, int id) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(ids.rows) * ids.cols);
  for (int y = 0; y < ids.rows; ++y) {
    const auto* row = ids.ptr<std::uint8_t>(y);
    for (int x = 0; x < ids.cols; ++x) v[static_cast<std::size_t>(y) * ids.cols + x] = row[x] == id;
  }
  return BinaryMask(ids.rows, ids.cols, std::move(v));
}

}  // namespace siammask
