"""Writes the NIfTI-1 fixtures used by test_volume_io.cpp (requires nibabel)."""
import numpy as np
import nibabel as nib

dims = (4, 5, 3)
n = int(np.prod(dims))
# Fortran order: x fastest, matching NIfTI storage.
image = (np.arange(n, dtype=np.int32) * 37 % 901 - 450).astype(np.int16).reshape(dims, order="F")
labels = (np.arange(n) % 3).astype(np.uint16).reshape(dims, order="F")

def save(arr, name, dtype):
    img = nib.Nifti1Image(arr.astype(dtype), affine=np.diag([0.8, 0.9, 2.5, 1.0]))
    img.header.set_zooms((0.8, 0.9, 2.5))
    img.header.set_data_dtype(dtype)
    img.header["scl_slope"] = 1.0
    img.header["scl_inter"] = 0.0
    nib.save(img, name)

save(image, "ct_int16.nii", np.int16)
save(labels, "gt_uint16.nii", np.uint16)
save(labels.astype(np.uint8), "gt_uint8.nii", np.uint8)
save(image.astype(np.float32), "ct_float32.nii", np.float32)
save(image.astype(np.float64), "ct_float64.nii", np.float64)
