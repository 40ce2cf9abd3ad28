#pragma once

#include "y12/attention.hpp"
#include "y12/bench.hpp"
#include "y12/blocks.hpp"
#include "y12/common.hpp"
#include "y12/dataset.hpp"
#include "y12/gradcheck.hpp"
#include "y12/image.hpp"
#include "y12/layers.hpp"
#include "y12/model.hpp"
#include "y12/ops.hpp"
#include "y12/postprocess.hpp"
#include "y12/profiler.hpp"
#include "y12/report_io.hpp"
#include "y12/serialize.hpp"
#include "y12/tensor.hpp"
#include "y12/train.hpp"
