#pragma once

#include <cstdint>
#include <string>

#include "fogseg/tensor.hpp"

// File formats: color rasters as binary PPM (P6, maxval 255), label maps as
// binary PGM (P5, maxval 255, 255 = ignore), depth as PFM ("Pf", scale -1.0,
// little-endian, bottom-up rows). Rasters live in memory as {3,H,W} floats in
// [0,1]; writers quantize with round-to-nearest so a written raster re-reads
// to exactly k/255 values.

namespace fogseg {

uint8_t quantize8(float v);
Tensorf quantize_raster(const Tensorf& img);  // snap every value to the 8-bit grid

void write_ppm(const std::string& path, const Tensorf& img);
Tensorf read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensori& labels);
Tensori read_pgm(const std::string& path);

void write_pfm(const std::string& path, const Tensorf& depth);
Tensorf read_pfm(const std::string& path);

// write-temp-then-rename; used for every artifact this project emits
void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file_bytes(const std::string& path);

}  // namespace fogseg
