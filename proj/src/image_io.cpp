#include "singanseg/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "singanseg/errors.hpp"

namespace singanseg {

namespace fs = std::filesystem;

torch::Tensor load_image_rgb(const fs::path& p) {
    cv::Mat bgr = cv::imread(p.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("unreadable image: " + p.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0);
}

torch::Tensor load_mask_gray(const fs::path& p) {
    cv::Mat gray = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw DataError("unreadable mask: " + p.string());
    auto t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
    return t.unsqueeze(0).to(torch::kFloat32).div_(255.0);
}

void save_image_rgb(const fs::path& p, const torch::Tensor& image) {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected 3xHxW image");
    auto u8 = image.clamp(0, 1).mul(255.0).round().to(torch::kUInt8)
                  .permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3,
                u8.data_ptr<std::uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(p.string(), bgr)) throw DataError("cannot write image: " + p.string());
}

void save_mask_gray(const fs::path& p, const torch::Tensor& mask) {
    TORCH_CHECK(mask.dim() == 3 && mask.size(0) == 1, "expected 1xHxW mask");
    auto u8 = mask.clamp(0, 1).mul(255.0).round().to(torch::kUInt8).squeeze(0).contiguous();
    cv::Mat gray(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1,
                 u8.data_ptr<std::uint8_t>());
    if (!cv::imwrite(p.string(), gray)) throw DataError("cannot write mask: " + p.string());
}

}  // namespace singanseg
