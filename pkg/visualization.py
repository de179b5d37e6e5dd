import plotly.express as px
import plotly.graph_objects as go
import numpy as np
from pathlib import Path

from rollout import summarize

_LAYOUT = dict(
    margin=dict(l=10, r=10, t=40, b=10),
    plot_bgcolor='rgba(0,0,0,0)',
    paper_bgcolor='rgba(0,0,0,0)',
)


def _config_label(frame):
    """Policy label with its horizon, e.g. 'flowbotpp H=7'."""
    return frame['policy'].astype(str) + ' H=' + frame['H'].astype(str)


def create_horizon_chart(summary):
    """
    Create a bar chart of mean normalized distance per policy configuration

    Args:
        summary: DataFrame from rollout.summarize

    Returns:
        Figure: Plotly figure object
    """
    data = summary.copy()
    data['config'] = _config_label(data)
    data = data.sort_values(['policy', 'H'])

    fig = px.bar(
        data,
        x='config',
        y='mean_norm_dist',
        color='success_rate',
        color_continuous_scale='plasma',
        range_color=(0, 1),
        title='Normalized Distance by Policy',
        text=data['mean_norm_dist'].round(3),
        hover_data={'success_rate': ':.2f', 'mean_dq_var': ':.2e', 'rollouts': True},
    )
    fig.update_layout(
        xaxis_title='Policy',
        yaxis_title='Mean Normalized Distance',
        coloraxis_colorbar=dict(title="Success"),
        **_LAYOUT,
    )
    fig.update_traces(textposition='outside', textfont_size=10, opacity=0.9)
    return fig


def create_opening_profile_chart(profile):
    """
    Create a line chart of mean opening fraction over steps for each policy

    Args:
        profile: Profile DataFrame from rollout.evaluate

    Returns:
        Figure: Plotly figure object
    """
    data = profile.copy()
    data['config'] = _config_label(data)
    fig = px.line(
        data,
        x='step',
        y='opening_fraction',
        color='config',
        markers=True,
        title='Opening Fraction per Step',
        color_discrete_sequence=px.colors.qualitative.Bold,
    )
    fig.update_layout(xaxis_title='Step', yaxis_title='Opening Fraction', yaxis_range=[0, 1.05], **_LAYOUT)
    return fig


def create_acceleration_chart(profile):
    data = profile.copy()
    data['config'] = _config_label(data)
    fig = px.line(
        data,
        x='step',
        y='angular_accel',
        color='config',
        title='Joint Acceleration per Step',
        color_discrete_sequence=px.colors.qualitative.Bold,
    )
    fig.update_layout(xaxis_title='Step', yaxis_title='Second Difference of q', **_LAYOUT)
    return fig


def create_contact_scatter(trace):
    """
    Create a scatter of contact positions in the xy plane colored by joint acceleration

    Args:
        trace: Trace DataFrame from rollout.trace_frame

    Returns:
        Figure: Plotly figure object
    """
    q = trace['q'].to_numpy()
    accel = np.diff(q, n=2, prepend=q[0], append=q[-1]) if len(q) else q
    fig = go.Figure(
        go.Scatter(
            x=trace['contact_x'],
            y=trace['contact_y'],
            mode='markers+lines',
            line=dict(color='rgba(0,0,0,0.2)'),
            marker=dict(
                color=accel,
                colorscale='RdBu',
                cmid=0.0,
                size=9,
                colorbar=dict(title="Accel"),
                line=dict(color='#000000', width=1),
            ),
            text=[f"step {s}" for s in trace['step']],
            hoverinfo='text+x+y',
        )
    )
    fig.update_layout(
        title='Contact Path (top view)',
        xaxis_title='x (m)',
        yaxis_title='y (m)',
        yaxis=dict(scaleanchor='x', scaleratio=1),
        **_LAYOUT,
    )
    return fig


def create_success_heatmap(summary_by_type):
    """
    Create a heatmap of success rate by policy configuration and joint type

    Args:
        summary_by_type: DataFrame from rollout.summarize(metrics, by_type=True)

    Returns:
        Figure: Plotly figure object
    """
    data = summary_by_type.copy()
    data['config'] = _config_label(data)
    pivot_data = data.pivot_table(
        values='success_rate',
        index='config',
        columns='joint_type',
        aggfunc='mean',
        fill_value=0,
    )
    fig = px.imshow(
        pivot_data,
        text_auto='.2f',
        aspect="auto",
        color_continuous_scale='Viridis',
        zmin=0,
        zmax=1,
        title='Success Rate by Joint Type',
    )
    fig.update_layout(xaxis_title='Joint Type', yaxis_title='Policy', margin=dict(l=10, r=10, t=40, b=10))
    return fig


def write_report_html(path, figures, title="Articulation Evaluation"):
    """
    Write figures into one standalone HTML file

    Args:
        path: Output file
        figures: Iterable of plotly figures
        title: Page title
    """
    parts = [f"<html><head><meta charset='utf-8'><title>{title}</title></head><body><h1>{title}</h1>"]
    for i, fig in enumerate(figures):
        # the plotly bundle is embedded once
        parts.append(fig.to_html(full_html=False, include_plotlyjs=(i == 0)))
    parts.append("</body></html>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def gnuplot_script(summary_csv, output_png="summary.png"):
    """Gnuplot script drawing mean normalized distance per configuration from a summary CSV."""
    return "\n".join([
        "set datafile separator ','",
        "set terminal pngcairo size 900,500",
        f"set output '{output_png}'",
        "set style data histograms",
        "set style fill solid 0.8 border -1",
        "set ylabel 'mean normalized distance'",
        "set yrange [0:*]",
        "set xtics rotate by -30",
        "set key off",
        f"plot '{summary_csv}' every ::1 using 5:xticlabels(stringcolumn(1).' H='.stringcolumn(2))",
        "",
    ])


def write_gnuplot_script(path, summary_csv):
    path = Path(path)
    path.write_text(gnuplot_script(Path(summary_csv).name, path.with_suffix('.png').name), encoding="utf-8")


def build_report_figures(evaluation):
    """Standard figure set for an evaluation: horizon bars, opening profile, acceleration, success heatmap."""
    return [
        create_horizon_chart(evaluation.summary),
        create_opening_profile_chart(evaluation.profile),
        create_acceleration_chart(evaluation.profile),
        create_success_heatmap(summarize(evaluation.metrics, by_type=True)),
    ]
