#pragma once

#include "dcnn/dense.hpp"
#include "dcnn/error.hpp"
#include "dcnn/evalnet.hpp"
#include "dcnn/imageio.hpp"
#include "dcnn/matchnet.hpp"
#include "dcnn/metrics.hpp"
#include "dcnn/pipeline.hpp"
#include "dcnn/synthetic.hpp"
#include "dcnn/transforms.hpp"
