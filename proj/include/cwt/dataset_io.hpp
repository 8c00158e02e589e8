#pragma once

#include <string>

#include "cwt/taskgen.hpp"

namespace cwt {

// Directory layout: manifest.json (spec, seed, sample list) plus one
// subdirectory per class holding that class's primary samples. Each sample is
// a flat record: "SEG1", u32 H, u32 W, u32 C, C*H*W little-endian f32 image
// values in plane order, then H*W u8 mask labels.
void export_dataset(const Dataset& dataset, const std::string& dir);

// Images come back rounded to f32.
Dataset import_dataset(const std::string& dir);

std::string class_dir_name(int class_id);

}  // namespace cwt
