#pragma once

#include <string>
#include <variant>

#include "hnseg/volume.hpp"

namespace hnseg {

using NiftiVolume = std::variant<ScalarVolume, LabelVolume>;

// Reads a NIfTI-1 file (.nii or .nii.gz). The volume is reoriented to
// canonical RAS; spacing/origin come from the sform (quaternion fallback,
// pixdim last). scl_slope/scl_inter are applied to scalar data. uint8 data
// is returned as a LabelVolume, everything else as a ScalarVolume.
//
// Errors: FormatError (malformed header/magic/truncation), UnsupportedError
// (datatype, hdr/img pairs, 4D), OrientationError (sheared/rotated affine,
// names the file).
NiftiVolume read_nifti(const std::string& path);

// Convenience accessors; throw CaseError when the file holds the other kind.
ScalarVolume read_nifti_scalar(const std::string& path);
LabelVolume read_nifti_labels(const std::string& path);

// Scalars are written as float32, labels as uint8; sform code 1, magic n+1.
// Gzip-compressed when the path ends in ".gz".
void write_nifti(const ScalarVolume& v, const std::string& path);
void write_nifti(const LabelVolume& v, const std::string& path);

// True if the load had to permute/flip axes to reach RAS (recorded so
// callers can log the reorientation).
bool last_read_was_reoriented();

}  // namespace hnseg
