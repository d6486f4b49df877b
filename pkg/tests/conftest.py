"""
Pytest配置文件

提供测试的fixtures和配置
"""

import shutil
import sys
import tempfile
from pathlib import Path

import pytest

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / "src"))

from detector_extension.config import Config  # noqa: E402
from detector_extension.modules.feature_store import write_feature_store  # noqa: E402
from detector_extension.modules.mock_backends import (  # noqa: E402
    mock_feature_store,
    vehicle_similarity_matrix,
)
from detector_extension.modules.similarity import save_compatibility, select_compatible  # noqa: E402
from detector_extension.modules.utils import write_json  # noqa: E402

from .helpers import BASE_CLASSES, CLASSIFIER_LABELS, EXTENSION_CLASSES  # noqa: E402


@pytest.fixture
def temp_dir():
    """创建临时目录"""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path)


@pytest.fixture
def test_config(temp_dir, monkeypatch):
    """测试配置（不读取环境变量中的覆盖项）"""
    for name in ("EXT_THRESHOLD", "EXT_METRIC", "FEATURE_DIM", "SIMILARITY_MODE", "PAD_FRACTION",
                 "PIPELINE_MODE", "MOCK_SEED", "MOCK_ACCURACY", "DETECTOR_LATENCY_MS",
                 "CLASSIFIER_LATENCY_MS", "BENCH_REPETITIONS", "LOG_LEVEL", "LOG_FORMAT",
                 "LOG_DIR", "ENABLE_FILE_LOGGING"):
        monkeypatch.delenv(name, raising=False)
    config = Config()
    config.logging.log_dir = str(temp_dir / "logs")
    config.logging.level = "WARNING"
    return config


@pytest.fixture
def vehicle_matrix():
    """车辆参考距离矩阵"""
    return vehicle_similarity_matrix()


@pytest.fixture
def vehicle_store(vehicle_matrix):
    """质心复现车辆参考距离的特征存储"""
    return mock_feature_store(vehicle_matrix, samples_per_class=8, dimension=16, seed=7)


@pytest.fixture
def vehicle_features_file(temp_dir, vehicle_store):
    """车辆特征JSONL文件"""
    path = temp_dir / "vehicle_features.jsonl"
    write_feature_store(vehicle_store, path)
    return path


@pytest.fixture
def vehicle_compat(vehicle_matrix):
    """阈值0.05下的兼容类别: Van -> [Truck, Car, Bus]"""
    return select_compatible(vehicle_matrix, BASE_CLASSES, EXTENSION_CLASSES, 0.05)


@pytest.fixture
def compat_file(temp_dir, vehicle_compat):
    path = temp_dir / "compat.json"
    save_compatibility(vehicle_compat, path)
    return path


@pytest.fixture
def small_scenario_doc():
    """4帧场景：第0帧Van被误检为Truck，第1帧真实Car，第2帧Person，第3帧为空"""
    return {
        "seed": 11,
        "frames": 4,
        "size": [640, 480],
        "script": [
            {"frame": 0, "box": [100, 100, 200, 180], "true": "Van", "emitted": "Truck",
             "confidence": 0.81},
            {"frame": 1, "box": [50, 60, 150, 160], "true": "Car", "emitted": "Car",
             "confidence": 0.77},
            {"frame": 1, "box": [300, 200, 420, 300], "true": "Van", "emitted": "Truck",
             "confidence": 0.66},
            {"frame": 2, "box": [10, 10, 40, 90], "true": "Person", "emitted": "Person",
             "confidence": 0.93},
        ],
        "classifier_labels": CLASSIFIER_LABELS,
    }


@pytest.fixture
def write_scenario_file(temp_dir):
    """把场景文档写入临时文件的工厂"""
    def _write(document, name="scenario.json"):
        path = temp_dir / name
        write_json(path, document)
        return path
    return _write


@pytest.fixture
def small_scenario_file(write_scenario_file, small_scenario_doc):
    return write_scenario_file(small_scenario_doc)


def _ten_track_script():
    # 轨迹 0..9 横向排开互不重叠；0-3 为兼容类别，其中 0、1 是被误检的Van
    labels = {
        0: ("Van", "Truck"),
        1: ("Van", "Car"),
        2: ("Bus", "Bus"),
        3: ("Truck", "Truck"),
        4: ("Person", "Person"),
        5: ("Person", "Person"),
        6: ("Dog", "Dog"),
        7: ("Bicycle", "Bicycle"),
        8: ("Person", "Person"),
        9: ("Dog", "Dog"),
    }
    script = []
    for frame in range(30):
        for track, (true_label, emitted) in labels.items():
            x1 = 10 + 60 * track
            width = 20 + (frame + track) % 7
            script.append({
                "frame": frame,
                "box": [x1, 100, x1 + width, 160],
                "true": true_label,
                "emitted": emitted,
                "confidence": round(0.5 + 0.01 * ((frame * 7 + track) % 40), 2),
                "track": track,
            })
    return script


@pytest.fixture
def ten_track_doc():
    """10条轨迹 x 30帧，其中4条轨迹属于兼容基础类别"""
    return {
        "seed": 3,
        "frames": 30,
        "size": [640, 480],
        "script": _ten_track_script(),
        "confusions": [["Van", "Truck"], ["Van", "Car"]],
        "classifier_labels": ["Bicycle", "Bus", "Car", "Dog", "Person", "Truck", "Van"],
    }


@pytest.fixture
def ten_track_file(write_scenario_file, ten_track_doc):
    return write_scenario_file(ten_track_doc, "ten_tracks.json")


def pytest_collection_modifyitems(config, items):
    """命令行测试标记为集成测试，其余为单元测试"""
    for item in items:
        if item.fspath.basename == "test_cli.py":
            item.add_marker(pytest.mark.integration)
        else:
            item.add_marker(pytest.mark.unit)
